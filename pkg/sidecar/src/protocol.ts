/**
 * Wire types for the line-delimited JSON protocol.
 *
 * One JSON object per line on stdin/stdout. Every request id gets exactly
 * one response line; responses may be produced in any order and the
 * consumer matches them by id.
 */

export interface SegmentRequest {
  id: string;
  image: string;
  point: [number, number];
  want_rle?: boolean;
}

export interface CandidateJson {
  area: number;
  bbox: [number, number, number, number];
  contains_prompt: boolean;
  rle?: number[];
}

export interface SegmentResponse {
  id: string;
  candidates: CandidateJson[];
}

export interface ErrorResponse {
  id: string;
  error: string;
}

export class RequestError extends Error {}

/** Validate a parsed JSON value as a request; throws RequestError. */
export function parseRequest(value: unknown): SegmentRequest {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new RequestError("request must be a JSON object");
  }
  const obj = value as Record<string, unknown>;
  if (typeof obj.id !== "string" || obj.id.length === 0) {
    throw new RequestError("missing string field 'id'");
  }
  if (typeof obj.image !== "string" || obj.image.length === 0) {
    throw new RequestError("missing string field 'image'");
  }
  const point = obj.point;
  if (
    !Array.isArray(point) ||
    point.length !== 2 ||
    !point.every((v) => typeof v === "number" && Number.isFinite(v))
  ) {
    throw new RequestError("field 'point' must be [x, y] numbers");
  }
  if (obj.want_rle !== undefined && typeof obj.want_rle !== "boolean") {
    throw new RequestError("field 'want_rle' must be a boolean");
  }
  return {
    id: obj.id,
    image: obj.image,
    point: [point[0], point[1]],
    want_rle: obj.want_rle === true,
  };
}

export function writeLine(out: NodeJS.WritableStream, payload: unknown): void {
  out.write(`${JSON.stringify(payload)}\n`);
}
