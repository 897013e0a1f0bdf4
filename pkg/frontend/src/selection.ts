/**
 * Span arithmetic for highlight selection.
 *
 * All offsets are character offsets into the server-provided assembled
 * context text, which the client renders verbatim and never re-normalizes;
 * these helpers are the single place where raw mouse selections become
 * word-aligned, non-overlapping spans.
 */

import type { Span } from "./types.js";

function isSpace(ch: string): boolean {
  return /\s/.test(ch);
}

/** Spans of whitespace-delimited words in reading order. */
export function wordSpans(text: string): Span[] {
  const spans: Span[] = [];
  let start = -1;
  for (let i = 0; i < text.length; i++) {
    if (isSpace(text[i])) {
      if (start !== -1) {
        spans.push({ start, end: i });
        start = -1;
      }
    } else if (start === -1) {
      start = i;
    }
  }
  if (start !== -1) spans.push({ start, end: text.length });
  return spans;
}

/**
 * Snap a raw selection outward to word boundaries. Returns null when the
 * selection covers no word characters (e.g. whitespace only or out of range).
 */
export function snapToWords(text: string, rawStart: number, rawEnd: number): Span | null {
  let start = Math.max(0, Math.min(rawStart, rawEnd));
  let end = Math.min(text.length, Math.max(rawStart, rawEnd));
  if (start >= end) return null;

  // drop leading/trailing whitespace inside the selection first
  while (start < end && isSpace(text[start])) start++;
  while (end > start && isSpace(text[end - 1])) end--;
  if (start >= end) return null;

  // then expand outward to the enclosing word boundaries
  while (start > 0 && !isSpace(text[start - 1])) start--;
  while (end < text.length && !isSpace(text[end])) end++;
  return { start, end };
}

/** Sort spans and merge any that overlap or touch. */
export function mergeSpans(spans: ReadonlyArray<Span>): Span[] {
  const sorted = [...spans].sort((a, b) => a.start - b.start || a.end - b.end);
  const merged: Span[] = [];
  for (const span of sorted) {
    const last = merged[merged.length - 1];
    if (last && span.start <= last.end) {
      last.end = Math.max(last.end, span.end);
    } else {
      merged.push({ ...span });
    }
  }
  return merged;
}

/** Add a raw selection to an existing set: snap, then merge. */
export function addSelection(
  text: string,
  existing: ReadonlyArray<Span>,
  rawStart: number,
  rawEnd: number,
): Span[] {
  const snapped = snapToWords(text, rawStart, rawEnd);
  if (snapped === null) return [...existing];
  return mergeSpans([...existing, snapped]);
}

export function sliceSpans(text: string, spans: ReadonlyArray<Span>): string[] {
  return spans.map((s) => text.slice(s.start, s.end));
}

export function toOffsetPairs(spans: ReadonlyArray<Span>): [number, number][] {
  return spans.map((s) => [s.start, s.end]);
}
