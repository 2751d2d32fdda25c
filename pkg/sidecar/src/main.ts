#!/usr/bin/env node
/**
 * driveforge-sidecar --model <spec.json> [--device cpu] [--cache-size 16]
 *
 * Serves point-prompt segmentation over line-delimited JSON on
 * stdin/stdout; see docs/wire_protocol.md in the consumer repo. The
 * model spec file configures the threshold pyramid and the neighbor
 * count, e.g. {"thresholds": [64, 127, 191], "neighbors": 2}.
 */

import * as fs from "node:fs";

import { DEFAULT_MODEL, ModelSpec, parseModelSpec } from "./engine";
import { serve } from "./server";

interface CliOptions {
  modelPath: string | null;
  device: string;
  cacheSize: number;
}

export function parseArgs(argv: string[]): CliOptions {
  const options: CliOptions = { modelPath: null, device: "cpu", cacheSize: 16 };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    const next = () => {
      i++;
      if (i >= argv.length) throw new Error(`${arg} needs a value`);
      return argv[i];
    };
    switch (arg) {
      case "--model":
        options.modelPath = next();
        break;
      case "--device":
        options.device = next();
        break;
      case "--cache-size":
        options.cacheSize = Number.parseInt(next(), 10);
        if (!Number.isInteger(options.cacheSize) || options.cacheSize < 1) {
          throw new Error("--cache-size must be a positive integer");
        }
        break;
      case "--help":
      case "-h":
        process.stdout.write(
          "usage: driveforge-sidecar [--model spec.json] [--device cpu] " +
            "[--cache-size N]\n",
        );
        process.exit(0);
        break;
      default:
        throw new Error(`unknown argument ${arg}`);
    }
  }
  return options;
}

function loadModel(path: string | null): ModelSpec {
  if (path === null) return DEFAULT_MODEL;
  let raw: string;
  try {
    raw = fs.readFileSync(path, "utf-8");
  } catch (e) {
    throw new Error(`cannot read model spec ${path}: ${(e as Error).message}`);
  }
  return parseModelSpec(JSON.parse(raw));
}

export function main(): void {
  let options: CliOptions;
  let model: ModelSpec;
  try {
    options = parseArgs(process.argv.slice(2));
    model = loadModel(options.modelPath);
  } catch (e) {
    process.stderr.write(`driveforge-sidecar: ${(e as Error).message}\n`);
    process.exit(2);
    return;
  }
  if (options.device !== "cpu") {
    process.stderr.write(
      `driveforge-sidecar: device ${options.device} not available, using cpu\n`,
    );
  }
  serve(process.stdin, process.stdout, {
    model,
    cacheSize: options.cacheSize,
  }).then(() => process.exit(0));
}

if (require.main === module) {
  main();
}
