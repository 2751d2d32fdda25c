/**
 * Protocol conformance against the built binary: spawn dist/main.js and
 * drive it over real pipes the way the consumer does.
 */

import { ChildProcess, spawn } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import * as readline from "node:readline";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { encodePng } from "../src/image";

const MAIN = path.resolve(__dirname, "..", "dist", "main.js");

let tmpDir: string;
let fixtures: string[];

function writeFixturePng(name: string, seed: number): string {
  const file = path.join(tmpDir, name);
  const buffer = encodePng(64, 48, (x, y) => {
    const inBlobA = x >= 5 + seed && x < 25 + seed && y >= 8 && y < 28;
    const inBlobB = x >= 40 && x < 58 && y >= 30 && y < 44;
    const v = inBlobA ? 255 : inBlobB ? 200 : 12;
    return [v, v, v];
  });
  fs.writeFileSync(file, buffer);
  return file;
}

class SidecarHandle {
  readonly child: ChildProcess;
  private readonly lines: unknown[] = [];
  private waiters: Array<() => void> = [];

  constructor(args: string[] = []) {
    this.child = spawn("node", [MAIN, ...args], {
      stdio: ["pipe", "pipe", "pipe"],
    });
    const rl = readline.createInterface({ input: this.child.stdout! });
    rl.on("line", (line) => {
      this.lines.push(JSON.parse(line));
      this.waiters.forEach((w) => w());
      this.waiters = [];
    });
  }

  send(payload: unknown): void {
    this.child.stdin!.write(`${JSON.stringify(payload)}\n`);
  }

  sendRaw(line: string): void {
    this.child.stdin!.write(`${line}\n`);
  }

  async collect(count: number, timeoutMs = 15000): Promise<any[]> {
    const deadline = Date.now() + timeoutMs;
    while (this.lines.length < count) {
      if (Date.now() > deadline) {
        throw new Error(`timed out with ${this.lines.length}/${count} responses`);
      }
      await new Promise<void>((resolve) => {
        const timer = setTimeout(resolve, 50);
        this.waiters.push(() => {
          clearTimeout(timer);
          resolve();
        });
      });
    }
    return this.lines.slice(0, count) as any[];
  }

  async close(): Promise<number | null> {
    this.child.stdin!.end();
    return new Promise((resolve) => this.child.on("exit", resolve));
  }
}

beforeAll(() => {
  tmpDir = fs.mkdtempSync(path.join(os.tmpdir(), "sidecar-e2e-"));
  fixtures = [0, 3, 7].map((seed) => writeFixturePng(`frame${seed}.png`, seed));
});

afterAll(() => {
  fs.rmSync(tmpDir, { recursive: true, force: true });
});

function decodeRle(rle: number[]): boolean[] {
  const flat: boolean[] = [];
  let value = false;
  for (const run of rle) {
    for (let i = 0; i < run; i++) flat.push(value);
    value = !value;
  }
  return flat;
}

describe("sidecar process", () => {
  it("conserves ids across 100 pipelined requests", async () => {
    const sidecar = new SidecarHandle();
    const ids = new Set<string>();
    for (let i = 0; i < 100; i++) {
      const id = `req-${i}`;
      ids.add(id);
      sidecar.send({
        id,
        image: fixtures[i % fixtures.length],
        point: [10 + (i % 40), 10 + (i % 30)],
      });
    }
    const responses = await sidecar.collect(100);
    expect(new Set(responses.map((r) => r.id))).toEqual(ids);
    for (const response of responses) {
      expect("candidates" in response || "error" in response).toBe(true);
    }
    expect(await sidecar.close()).toBe(0);
  });

  it("returns self-consistent RLE for every candidate", async () => {
    const sidecar = new SidecarHandle();
    sidecar.send({ id: "r", image: fixtures[0], point: [15, 18], want_rle: true });
    const [response] = await sidecar.collect(1);
    expect(response.candidates.length).toBeGreaterThanOrEqual(1);
    for (const cand of response.candidates) {
      const mask = decodeRle(cand.rle);
      expect(mask.length).toBe(64 * 48);
      expect(mask.filter(Boolean).length).toBe(cand.area);
      let minX = 64, minY = 48, maxX = -1, maxY = -1;
      mask.forEach((bit, idx) => {
        if (!bit) return;
        const x = idx % 64;
        const y = Math.floor(idx / 64);
        minX = Math.min(minX, x);
        minY = Math.min(minY, y);
        maxX = Math.max(maxX, x);
        maxY = Math.max(maxY, y);
      });
      expect([minX, minY, maxX + 1, maxY + 1]).toEqual(cand.bbox);
    }
    await sidecar.close();
  });

  it("survives per-request failures and keeps serving", async () => {
    const sidecar = new SidecarHandle();
    sidecar.send({ id: "bad-point", image: fixtures[0], point: [9999, 0] });
    sidecar.send({ id: "bad-image", image: path.join(tmpDir, "none.png"), point: [1, 1] });
    sidecar.sendRaw("this is not json");
    sidecar.send({ id: "good", image: fixtures[0], point: [15, 18] });
    const responses = await sidecar.collect(4);
    const byId = new Map(responses.map((r) => [r.id, r]));
    expect(byId.get("bad-point").error).toMatch(/outside/);
    expect(byId.get("bad-image").error).toMatch(/ENOENT/);
    expect(byId.get("unknown").error).toMatch(/malformed/);
    expect(byId.get("good").candidates.length).toBeGreaterThan(0);
    expect(await sidecar.close()).toBe(0);
  });

  it("honors a model spec file", async () => {
    const spec = path.join(tmpDir, "model.json");
    fs.writeFileSync(spec, JSON.stringify({ thresholds: [127], neighbors: 0 }));
    const sidecar = new SidecarHandle(["--model", spec]);
    sidecar.send({ id: "m", image: fixtures[0], point: [2, 2] });
    const [response] = await sidecar.collect(1);
    expect(response.candidates).toEqual([]); // dark prompt, no neighbors
    await sidecar.close();
  });

  it("exits with usage error on an unreadable model spec", async () => {
    const child = spawn("node", [MAIN, "--model", path.join(tmpDir, "ghost.json")]);
    const code = await new Promise((resolve) => child.on("exit", resolve));
    expect(code).toBe(2);
  });
});
