/**
 * Per-sample UI session: the loaded sample, the current (word-aligned,
 * non-overlapping) selection, and an append-only history of caption runs.
 * History entries are frozen so a past run can always be re-issued verbatim
 * (the seed travels with the entry).
 */

import { ServiceClient } from "./api.js";
import { addSelection, sliceSpans, toOffsetPairs } from "./selection.js";
import type {
  CaptionRequest,
  CaptionResponse,
  ControllerKind,
  HistoryEntry,
  SampleRecord,
  Span,
} from "./types.js";

export class CaptionSession {
  private selections: Span[] = [];
  private entries: HistoryEntry[] = [];
  private nextId = 1;
  private inFlight = false;

  constructor(
    private readonly client: ServiceClient,
    readonly sample: SampleRecord,
  ) {}

  /** The server's assembled context text; rendered verbatim, never rebuilt. */
  get text(): string {
    return this.sample.context.assembled_text;
  }

  get currentSelections(): ReadonlyArray<Span> {
    return this.selections;
  }

  get history(): ReadonlyArray<HistoryEntry> {
    return this.entries;
  }

  /** Snap a raw drag to word boundaries and merge it into the selection.
   * Selections outside the context text are ignored. */
  select(rawStart: number, rawEnd: number): ReadonlyArray<Span> {
    if (rawEnd < 0 || rawStart > this.text.length) return this.selections;
    this.selections = addSelection(this.text, this.selections, rawStart, rawEnd);
    return this.selections;
  }

  clearSelection(): void {
    this.selections = [];
  }

  selectionTexts(): string[] {
    return sliceSpans(this.text, this.selections);
  }

  buildRequest(controller: ControllerKind, numCaptions: number, seed: number): CaptionRequest {
    return {
      page_title: this.sample.context.page_title,
      section_title: this.sample.context.section_title,
      body: this.sample.context.body,
      aux_captions: this.sample.context.aux_captions,
      highlights: toOffsetPairs(this.selections),
      image_ref: this.sample.image.source_id,
      controller,
      num_captions: numCaptions,
      seed,
    };
  }

  /** POST the current selection and append the result to history. */
  async requestCaptions(
    controller: ControllerKind,
    numCaptions = 1,
    seed = 0,
  ): Promise<HistoryEntry> {
    if (this.inFlight) {
      throw new Error("a caption request is already in flight for this session");
    }
    this.inFlight = true;
    try {
      const request = this.buildRequest(controller, numCaptions, seed);
      const response = await this.client.caption(request);
      const entry = this.record(controller, seed, request, response);
      return entry;
    } finally {
      this.inFlight = false;
    }
  }

  /** Re-issue a past run verbatim; the result must reproduce its captions. */
  async rerun(entry: HistoryEntry): Promise<HistoryEntry> {
    const request: CaptionRequest = {
      page_title: this.sample.context.page_title,
      section_title: this.sample.context.section_title,
      body: this.sample.context.body,
      aux_captions: this.sample.context.aux_captions,
      highlights: entry.highlights.map((s) => [s.start, s.end]),
      image_ref: this.sample.image.source_id,
      controller: entry.controller,
      num_captions: entry.captions.length,
      seed: entry.seed,
    };
    const response = await this.client.caption(request);
    return this.record(entry.controller, entry.seed, request, response);
  }

  private record(
    controller: ControllerKind,
    seed: number,
    request: CaptionRequest,
    response: CaptionResponse,
  ): HistoryEntry {
    const spans = request.highlights.map(([start, end]) => ({ start, end }));
    const label = spans.length === 0
      ? "no highlights"
      : response.applied_highlights.map((h) => h.text).join(" + ");
    const entry: HistoryEntry = Object.freeze({
      id: this.nextId++,
      controller,
      seed,
      highlights: Object.freeze(spans),
      highlightTexts: Object.freeze(response.applied_highlights.map((h) => h.text)),
      captions: Object.freeze([...response.captions]),
      heatmap: response.relevance_heatmap
        ? Object.freeze([...response.relevance_heatmap])
        : null,
      modelVersion: response.model_version,
      label,
    });
    this.entries = [...this.entries, entry];
    return entry;
  }
}
