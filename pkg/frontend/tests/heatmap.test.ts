import { describe, expect, it } from "vitest";

import { bucketOf, heatCells } from "../src/heatmap.js";

describe("bucketOf", () => {
  it("spans the five buckets across [-1, 1]", () => {
    expect(bucketOf(-1)).toBe(0);
    expect(bucketOf(-0.5)).toBe(1);
    expect(bucketOf(0)).toBe(2);
    expect(bucketOf(0.5)).toBe(3);
    expect(bucketOf(1)).toBe(4);
  });

  it("clamps out-of-range scores", () => {
    expect(bucketOf(-2)).toBe(0);
    expect(bucketOf(2)).toBe(4);
  });
});

describe("heatCells", () => {
  it("produces one cell per word", () => {
    const cells = heatCells(["a", "b", "c"], [0.1, -0.2, 0.9]);
    expect(cells.length).toBe(3);
    expect(cells[2]).toEqual({ word: "c", score: 0.9, bucket: 4 });
  });

  it("rejects misaligned inputs", () => {
    expect(() => heatCells(["a"], [0.1, 0.2])).toThrow(/misaligned/);
  });
});
