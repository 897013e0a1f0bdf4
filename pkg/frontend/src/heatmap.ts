/** Relevance-score presentation: one cell per rendered word. */

export interface HeatCell {
  word: string;
  score: number;
  bucket: number; // 0..4, higher = more relevant
}

/** Quantize a cosine-like score in [-1, 1] into five intensity buckets. */
export function bucketOf(score: number): number {
  const clamped = Math.max(-1, Math.min(1, score));
  const unit = clamped / 2 + 0.5;
  return Math.min(4, Math.floor(unit * 5));
}

export function heatCells(words: ReadonlyArray<string>, scores: ReadonlyArray<number>): HeatCell[] {
  if (words.length !== scores.length) {
    throw new Error(`heatmap misaligned: ${words.length} words vs ${scores.length} scores`);
  }
  return words.map((word, i) => ({ word, score: scores[i], bucket: bucketOf(scores[i]) }));
}
