import { describe, expect, it } from "vitest";

import { DEFAULT_MODEL, encodeRle, parseModelSpec, segment } from "../src/engine";
import { RgbImage } from "../src/image";

function imageFromRows(rows: number[][]): RgbImage {
  const height = rows.length;
  const width = rows[0].length;
  const luma = new Uint8Array(width * height);
  rows.forEach((row, y) => row.forEach((v, x) => (luma[y * width + x] = v)));
  return { width, height, luma };
}

function blank(width: number, height: number, value = 0): number[][] {
  return Array.from({ length: height }, () => Array(width).fill(value));
}

function fillRect(
  rows: number[][],
  x1: number,
  y1: number,
  x2: number,
  y2: number,
  value: number,
): void {
  for (let y = y1; y < y2; y++) {
    for (let x = x1; x < x2; x++) rows[y][x] = value;
  }
}

function decodeRle(rle: number[], width: number, height: number): boolean[] {
  const flat: boolean[] = [];
  let value = false;
  for (const run of rle) {
    for (let i = 0; i < run; i++) flat.push(value);
    value = !value;
  }
  expect(flat.length).toBe(width * height);
  return flat;
}

describe("segment", () => {
  it("finds a single rectangle with exact area and tight bbox", () => {
    const rows = blank(40, 30);
    fillRect(rows, 10, 5, 25, 17, 255);
    const cands = segment(imageFromRows(rows), [15, 10]);
    expect(cands).toHaveLength(1);
    expect(cands[0].area).toBe(15 * 12);
    expect(cands[0].bbox).toEqual([10, 5, 25, 17]);
    expect(cands[0].contains_prompt).toBe(true);
  });

  it("returns nested candidates from the threshold pyramid", () => {
    const rows = blank(50, 40, 0);
    fillRect(rows, 5, 5, 45, 35, 100); // halo: above 64, below 127
    fillRect(rows, 20, 15, 30, 25, 230); // core: above everything
    const cands = segment(imageFromRows(rows), [22, 18]);
    // halo at threshold 64; the core at 127 and 191 is identical, deduped
    expect(cands.map((c) => c.area)).toEqual([40 * 30, 10 * 10]);
    expect(cands.every((c) => c.contains_prompt)).toBe(true);
  });

  it("dedupes identical masks across thresholds", () => {
    const rows = blank(20, 20);
    fillRect(rows, 2, 2, 10, 10, 255); // same component at every level
    const cands = segment(imageFromRows(rows), [5, 5]);
    expect(cands).toHaveLength(1);
  });

  it("falls back to nearest components when the prompt hits background", () => {
    const rows = blank(60, 30);
    fillRect(rows, 2, 10, 12, 20, 255);
    fillRect(rows, 40, 10, 55, 20, 255);
    const cands = segment(imageFromRows(rows), [25, 15]);
    expect(cands).toHaveLength(2);
    expect(cands.every((c) => !c.contains_prompt)).toBe(true);
  });

  it("caps neighbors at the configured count", () => {
    const rows = blank(100, 20);
    for (let i = 0; i < 5; i++) fillRect(rows, 2 + i * 20, 5, 12 + i * 20, 15, 255);
    const one = segment(imageFromRows(rows), [7, 10], {
      thresholds: [127],
      neighbors: 1,
    });
    expect(one).toHaveLength(2); // prompt component + 1 neighbor
    const four = segment(imageFromRows(rows), [7, 10], {
      thresholds: [127],
      neighbors: 4,
    });
    expect(four).toHaveLength(5);
  });

  it("returns an empty list on an all-dark image with no neighbors", () => {
    const cands = segment(imageFromRows(blank(10, 10)), [5, 5]);
    expect(cands).toEqual([]);
  });

  it("sorts candidates by area descending", () => {
    const rows = blank(80, 30);
    fillRect(rows, 2, 2, 10, 10, 255); // 64 px, prompt here
    fillRect(rows, 20, 2, 60, 28, 255); // 1040 px neighbor
    const cands = segment(imageFromRows(rows), [5, 5], {
      thresholds: [127],
      neighbors: 2,
    });
    expect(cands.map((c) => c.area)).toEqual([1040, 64]);
    expect(cands[1].contains_prompt).toBe(true);
  });

  it("rejects out-of-bounds points", () => {
    expect(() => segment(imageFromRows(blank(10, 10)), [11, 5])).toThrow(
      /outside/,
    );
    expect(() => segment(imageFromRows(blank(10, 10)), [-1, 5])).toThrow(
      /outside/,
    );
  });

  it("emits RLE that decodes back to the exact mask", () => {
    const rows = blank(30, 20);
    fillRect(rows, 4, 3, 17, 11, 255);
    fillRect(rows, 20, 12, 28, 18, 255);
    const image = imageFromRows(rows);
    for (const cand of segment(image, [10, 7], DEFAULT_MODEL, true)) {
      const mask = decodeRle(cand.rle!, image.width, image.height);
      const count = mask.filter(Boolean).length;
      expect(count).toBe(cand.area);
      let minX = image.width, minY = image.height, maxX = -1, maxY = -1;
      mask.forEach((bit, idx) => {
        if (!bit) return;
        const x = idx % image.width;
        const y = Math.floor(idx / image.width);
        minX = Math.min(minX, x);
        minY = Math.min(minY, y);
        maxX = Math.max(maxX, x);
        maxY = Math.max(maxY, y);
      });
      expect([minX, minY, maxX + 1, maxY + 1]).toEqual(cand.bbox);
    }
  });

  it("starts RLE with the zero run even for a bright first pixel", () => {
    const labels = new Int32Array([1, 1, 0, 1]);
    expect(encodeRle(labels, 1)).toEqual([0, 2, 1, 1]);
  });
});

describe("parseModelSpec", () => {
  it("accepts a full spec", () => {
    expect(parseModelSpec({ thresholds: [10, 20], neighbors: 3 })).toEqual({
      thresholds: [10, 20],
      neighbors: 3,
    });
  });

  it("fills defaults for missing fields", () => {
    expect(parseModelSpec({})).toEqual(DEFAULT_MODEL);
  });

  it.each([
    { thresholds: [] },
    { thresholds: [300] },
    { thresholds: "high" },
    { neighbors: -1 },
    { neighbors: 1.5 },
  ])("rejects %j", (bad) => {
    expect(() => parseModelSpec(bad)).toThrow();
  });
});
