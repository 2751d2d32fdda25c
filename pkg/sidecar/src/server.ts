/**
 * Request loop: one JSON object per stdin line, one response line each.
 *
 * Per-request failures (unreadable image, bad point, malformed JSON)
 * produce error responses and never terminate the process; the loop ends
 * when stdin closes.
 */

import * as readline from "node:readline";

import { ModelSpec, segment } from "./engine";
import { ImageCache } from "./image";
import {
  ErrorResponse,
  RequestError,
  SegmentResponse,
  parseRequest,
  writeLine,
} from "./protocol";

export interface ServerOptions {
  model: ModelSpec;
  cacheSize?: number;
}

export function handleLine(
  line: string,
  options: ServerOptions,
  cache: ImageCache,
): SegmentResponse | ErrorResponse | null {
  const trimmed = line.trim();
  if (!trimmed) return null;

  let parsed: unknown;
  try {
    parsed = JSON.parse(trimmed);
  } catch (e) {
    return { id: "unknown", error: `malformed JSON line: ${(e as Error).message}` };
  }

  let request;
  try {
    request = parseRequest(parsed);
  } catch (e) {
    const id =
      typeof (parsed as Record<string, unknown>)?.id === "string"
        ? ((parsed as Record<string, unknown>).id as string)
        : "unknown";
    if (e instanceof RequestError) {
      return { id, error: e.message };
    }
    return { id, error: `bad request: ${(e as Error).message}` };
  }

  try {
    const image = cache.load(request.image);
    const candidates = segment(
      image,
      request.point,
      options.model,
      request.want_rle === true,
    );
    return { id: request.id, candidates };
  } catch (e) {
    return { id: request.id, error: (e as Error).message };
  }
}

export function serve(
  input: NodeJS.ReadableStream,
  output: NodeJS.WritableStream,
  options: ServerOptions,
): Promise<void> {
  const cache = new ImageCache(options.cacheSize ?? 16);
  const rl = readline.createInterface({ input, crlfDelay: Infinity });
  return new Promise((resolve) => {
    rl.on("line", (line) => {
      const response = handleLine(line, options, cache);
      if (response !== null) {
        writeLine(output, response);
      }
    });
    rl.on("close", resolve);
  });
}
