/** Character span into the server's assembled context text. */
export interface Span {
  start: number;
  end: number;
}

export interface ContextRecord {
  page_title: string;
  section_title: string;
  body: string;
  aux_captions: string[];
  assembled_text: string;
  tokens: [string, number, number][];
  word_groups: [string, [number, number]][];
}

export interface SampleRecord {
  kind?: string;
  context: ContextRecord;
  image: { vector: number[]; source_id: string };
  highlights: [number, number][];
  target_caption: { text: string; token_count: number };
  sample_index: number;
  highlight_index: number;
}

export type ControllerKind = "prompting" | "recalibration";

export interface CaptionRequest {
  page_title: string;
  section_title: string;
  body: string;
  aux_captions: string[];
  highlights: [number, number][];
  image_ref?: string;
  image_feature?: number[];
  controller: ControllerKind;
  num_captions: number;
  seed: number;
  alpha?: number;
}

export interface ResolvedHighlight {
  char_start: number;
  char_end: number;
  text: string;
}

export interface CaptionResponse {
  captions: string[];
  applied_highlights: ResolvedHighlight[];
  relevance_heatmap: number[] | null;
  assembled_text: string;
  model_version: string;
}

export interface RelevanceResponse {
  word_scores: number[];
  words: string[];
  assembled_text: string;
}

export interface HealthResponse {
  status: string;
  checkpoints: string[];
  model_versions: Record<string, string>;
  providers: (string | null)[];
  num_samples: number;
}

/** One immutable run in the session history. */
export interface HistoryEntry {
  readonly id: number;
  readonly controller: ControllerKind;
  readonly seed: number;
  readonly highlights: ReadonlyArray<Span>;
  readonly highlightTexts: ReadonlyArray<string>;
  readonly captions: ReadonlyArray<string>;
  readonly heatmap: ReadonlyArray<number> | null;
  readonly modelVersion: string;
  readonly label: string;
}
