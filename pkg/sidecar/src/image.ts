/**
 * Image loading: PNG/JPEG decode plus a bounded LRU keyed by path, so
 * pipelined requests against the same frame decode it once.
 */

import * as fs from "node:fs";
import * as jpeg from "jpeg-js";
import { PNG } from "pngjs";

export interface RgbImage {
  width: number;
  height: number;
  /** Row-major luma per pixel, integer Rec.601: (299R + 587G + 114B) / 1000. */
  luma: Uint8Array;
}

function toLuma(width: number, height: number, rgba: Uint8Array | Buffer): RgbImage {
  const luma = new Uint8Array(width * height);
  for (let i = 0, p = 0; i < luma.length; i++, p += 4) {
    luma[i] = Math.floor(
      (299 * rgba[p] + 587 * rgba[p + 1] + 114 * rgba[p + 2]) / 1000,
    );
  }
  return { width, height, luma };
}

export function decodeImage(buffer: Buffer): RgbImage {
  if (buffer.length >= 8 && buffer[0] === 0x89 && buffer[1] === 0x50) {
    const png = PNG.sync.read(buffer);
    return toLuma(png.width, png.height, png.data);
  }
  if (buffer.length >= 2 && buffer[0] === 0xff && buffer[1] === 0xd8) {
    const img = jpeg.decode(buffer, { useTArray: true, maxMemoryUsageInMB: 512 });
    return toLuma(img.width, img.height, img.data);
  }
  throw new Error("unsupported image format (need PNG or JPEG)");
}

export function encodePng(
  width: number,
  height: number,
  rgb: (x: number, y: number) => [number, number, number],
): Buffer {
  const png = new PNG({ width, height });
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [r, g, b] = rgb(x, y);
      const p = (y * width + x) * 4;
      png.data[p] = r;
      png.data[p + 1] = g;
      png.data[p + 2] = b;
      png.data[p + 3] = 255;
    }
  }
  return PNG.sync.write(png);
}

export class ImageCache {
  private readonly capacity: number;
  private readonly entries = new Map<string, RgbImage>();

  constructor(capacity = 16) {
    if (capacity < 1) throw new Error("cache capacity must be >= 1");
    this.capacity = capacity;
  }

  get size(): number {
    return this.entries.size;
  }

  load(path: string): RgbImage {
    const hit = this.entries.get(path);
    if (hit) {
      // refresh recency: Map preserves insertion order
      this.entries.delete(path);
      this.entries.set(path, hit);
      return hit;
    }
    const image = decodeImage(fs.readFileSync(path));
    this.entries.set(path, image);
    if (this.entries.size > this.capacity) {
      const oldest = this.entries.keys().next().value as string;
      this.entries.delete(oldest);
    }
    return image;
  }
}
