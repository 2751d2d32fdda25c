/**
 * Point-prompt mask engine.
 *
 * Emulates a promptable segmentation model at desk scale: the image is
 * thresholded on luma at several levels, and the 4-connected component
 * under the prompt at each level becomes one candidate mask, coarse to
 * fine, the way a multi-mask model offers nested granularities. When the
 * prompt misses every component (thin structures, gaps between parts),
 * the nearest components at the base level are returned instead, so the
 * caller still receives candidates whose `contains_prompt` is false.
 *
 * Candidates carry exact pixel areas, tight bounding boxes (x2/y2
 * exclusive) and, on request, the full-image mask as row-major RLE
 * starting with the zero run. Selection policy (e.g. largest mask) is
 * deliberately left to the consumer.
 */

import { RgbImage } from "./image";

export interface ModelSpec {
  thresholds: number[];
  neighbors: number;
}

export const DEFAULT_MODEL: ModelSpec = {
  thresholds: [64, 127, 191],
  neighbors: 2,
};

export const BASE_THRESHOLD_INDEX = 1; // neighbors are searched at this level

export interface Candidate {
  area: number;
  bbox: [number, number, number, number];
  contains_prompt: boolean;
  rle?: number[];
}

export function parseModelSpec(value: unknown): ModelSpec {
  if (typeof value !== "object" || value === null) {
    throw new Error("model spec must be a JSON object");
  }
  const obj = value as Record<string, unknown>;
  const thresholds = obj.thresholds ?? DEFAULT_MODEL.thresholds;
  const neighbors = obj.neighbors ?? DEFAULT_MODEL.neighbors;
  if (
    !Array.isArray(thresholds) ||
    thresholds.length === 0 ||
    !thresholds.every(
      (t) => typeof t === "number" && Number.isInteger(t) && t >= 0 && t < 255,
    )
  ) {
    throw new Error("model spec 'thresholds' must be integers in [0, 255)");
  }
  if (typeof neighbors !== "number" || !Number.isInteger(neighbors) || neighbors < 0) {
    throw new Error("model spec 'neighbors' must be a non-negative integer");
  }
  return { thresholds: [...(thresholds as number[])], neighbors };
}

interface Component {
  label: number;
  area: number;
  bbox: [number, number, number, number];
  cx: number;
  cy: number;
}

interface Labeling {
  labels: Int32Array;
  components: Component[];
}

/** 4-connected components of luma > threshold, labeled 1..n. */
function labelComponents(image: RgbImage, threshold: number): Labeling {
  const { width, height, luma } = image;
  const labels = new Int32Array(width * height);
  const components: Component[] = [];
  const stack: number[] = [];

  for (let start = 0; start < luma.length; start++) {
    if (luma[start] <= threshold || labels[start] !== 0) continue;
    const label = components.length + 1;
    let area = 0;
    let minX = width, minY = height, maxX = -1, maxY = -1;
    let sumX = 0, sumY = 0;
    labels[start] = label;
    stack.push(start);
    while (stack.length > 0) {
      const idx = stack.pop()!;
      const x = idx % width;
      const y = (idx - x) / width;
      area++;
      sumX += x;
      sumY += y;
      if (x < minX) minX = x;
      if (x > maxX) maxX = x;
      if (y < minY) minY = y;
      if (y > maxY) maxY = y;
      if (x > 0 && luma[idx - 1] > threshold && labels[idx - 1] === 0) {
        labels[idx - 1] = label;
        stack.push(idx - 1);
      }
      if (x + 1 < width && luma[idx + 1] > threshold && labels[idx + 1] === 0) {
        labels[idx + 1] = label;
        stack.push(idx + 1);
      }
      if (y > 0 && luma[idx - width] > threshold && labels[idx - width] === 0) {
        labels[idx - width] = label;
        stack.push(idx - width);
      }
      if (y + 1 < height && luma[idx + width] > threshold && labels[idx + width] === 0) {
        labels[idx + width] = label;
        stack.push(idx + width);
      }
    }
    components.push({
      label,
      area,
      bbox: [minX, minY, maxX + 1, maxY + 1],
      cx: sumX / area,
      cy: sumY / area,
    });
  }
  return { labels, components };
}

export function encodeRle(labels: Int32Array, label: number): number[] {
  const runs: number[] = [];
  let value = false; // runs start with the zero count
  let run = 0;
  for (let i = 0; i < labels.length; i++) {
    const bit = labels[i] === label;
    if (bit === value) {
      run++;
    } else {
      runs.push(run);
      value = bit;
      run = 1;
    }
  }
  runs.push(run);
  return runs;
}

function toCandidate(
  labeling: Labeling,
  component: Component,
  containsPrompt: boolean,
  wantRle: boolean,
): Candidate {
  const candidate: Candidate = {
    area: component.area,
    bbox: component.bbox,
    contains_prompt: containsPrompt,
  };
  if (wantRle) {
    candidate.rle = encodeRle(labeling.labels, component.label);
  }
  return candidate;
}

/**
 * Candidate masks for a point prompt. The point is in image pixel
 * coordinates; the prompt pixel is (floor(x), floor(y)). Throws if the
 * point lies outside the image.
 */
export function segment(
  image: RgbImage,
  point: [number, number],
  model: ModelSpec = DEFAULT_MODEL,
  wantRle = false,
): Candidate[] {
  const [x, y] = point;
  if (x < 0 || y < 0 || x > image.width || y > image.height) {
    throw new Error(
      `point (${x}, ${y}) outside ${image.width}x${image.height} image`,
    );
  }
  const px = Math.min(Math.floor(x), image.width - 1);
  const py = Math.min(Math.floor(y), image.height - 1);
  const promptIdx = py * image.width + px;

  const candidates: Candidate[] = [];
  const seen = new Set<string>();
  const baseIndex = Math.min(BASE_THRESHOLD_INDEX, model.thresholds.length - 1);
  let baseLabeling: Labeling | null = null;

  model.thresholds.forEach((threshold, i) => {
    const labeling = labelComponents(image, threshold);
    if (i === baseIndex) baseLabeling = labeling;
    const label = labeling.labels[promptIdx];
    if (label === 0) return;
    const component = labeling.components[label - 1];
    const key = `${component.area}:${component.bbox.join(",")}`;
    if (seen.has(key)) return; // same mask at a neighboring threshold
    seen.add(key);
    candidates.push(toCandidate(labeling, component, true, wantRle));
  });

  if (baseLabeling !== null && model.neighbors > 0) {
    const labeling: Labeling = baseLabeling;
    const promptLabel = labeling.labels[promptIdx];
    const others = labeling.components
      .filter((c) => c.label !== promptLabel)
      .map((c) => ({
        c,
        dist: Math.hypot(c.cx + 0.5 - x, c.cy + 0.5 - y),
      }))
      .sort((a, b) => a.dist - b.dist || a.c.label - b.c.label)
      .slice(0, model.neighbors);
    for (const { c } of others) {
      candidates.push(toCandidate(labeling, c, false, wantRle));
    }
  }

  candidates.sort((a, b) => b.area - a.area);
  return candidates;
}
