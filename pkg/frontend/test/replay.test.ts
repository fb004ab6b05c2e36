// Replays a transcript recorded against the live Python server (JSONL of
// {"dir": "send"|"recv", "msg": ...}). The session, driven by the same
// operator actions, must emit exactly the recorded client messages, and the
// recorded server messages must land in the latency chart unchanged.

import { readFileSync } from "node:fs";
import { beforeAll, describe, expect, it } from "vitest";
import { ConsoleSession, Shape } from "../src/session.js";
import { decodeFrames, encodeFrames } from "../src/protocol.js";

interface Entry {
  dir: "send" | "recv";
  msg: Record<string, any>;
}

const FIXTURE = new URL("../fixtures/transcript.jsonl", import.meta.url).pathname;

let entries: Entry[];
let height: number;
let width: number;
let outputShape: Shape;

beforeAll(() => {
  entries = readFileSync(FIXTURE, "utf8").trim().split("\n").map((l) => JSON.parse(l));
  const readyMsg = entries.find(
    (e) => e.dir === "recv" && e.msg.type === "stats" && e.msg.event === "ready",
  );
  if (!readyMsg) throw new Error("fixture has no ready ack");
  height = readyMsg.msg.height;
  width = readyMsg.msg.width;
  outputShape = [readyMsg.msg.chunk_frames, height, width, readyMsg.msg.channels];
});

function refShape(b64: string): Shape {
  const bytes = atob(b64).length;
  return [bytes / 4 / (height * width * 3), height, width, 3];
}

function runReplay() {
  const sent: string[] = [];
  const results: Array<{ msg: Record<string, any>; frames: Float32Array }> = [];
  const statsSeen: Array<Record<string, any>> = [];
  const session = new ConsoleSession({ send: (t) => sent.push(t) }, {
    onResult: (msg, frames) => results.push({ msg, frames }),
    onStats: (msg) => statsSeen.push(msg),
  });
  for (const { dir, msg } of entries) {
    if (dir === "recv") {
      session.handleMessage(JSON.stringify(msg));
      continue;
    }
    switch (msg.type) {
      case "init":
        session.start(
          {
            window: msg.window,
            steps: msg.steps,
            cfgScale: msg.cfg_scale,
            effectLabel: msg.effect_label,
          },
          msg.reference_b64 !== undefined
            ? decodeFrames(msg.reference_b64, refShape(msg.reference_b64))
            : undefined,
        );
        break;
      case "condition":
        if (msg.effect_label !== undefined) session.setEffect(msg.effect_label);
        if (msg.reference_b64 !== undefined) {
          session.setReference(decodeFrames(msg.reference_b64, refShape(msg.reference_b64)));
        }
        break;
      case "chunk":
        session.sendChunk(decodeFrames(msg.frames_b64, msg.shape), msg.shape);
        break;
      case "stats":
        session.requestStats();
        break;
      default:
        throw new Error(`fixture has unknown client message ${msg.type}`);
    }
  }
  return { sent, results, statsSeen, session };
}

describe("transcript replay", () => {
  it("reproduces every recorded client message, in order", () => {
    const { sent } = runReplay();
    const recorded = entries.filter((e) => e.dir === "send").map((e) => e.msg);
    expect(sent.map((t) => JSON.parse(t))).toEqual(recorded);
  });

  it("frame payloads survive decode/encode byte-for-byte", () => {
    for (const { msg } of entries) {
      if (typeof msg.frames_b64 === "string") {
        // client chunks carry a shape; server results use the session's
        const shape = (msg.shape as Shape | undefined) ?? outputShape;
        expect(encodeFrames(decodeFrames(msg.frames_b64, shape))).toBe(msg.frames_b64);
      }
      if (typeof msg.reference_b64 === "string") {
        const ref = decodeFrames(msg.reference_b64, refShape(msg.reference_b64));
        expect(encodeFrames(ref)).toBe(msg.reference_b64);
      }
    }
  });

  it("latency chart reproduces the server's chunk_ms values exactly", () => {
    const { session } = runReplay();
    const recorded = entries
      .filter((e) => e.dir === "recv" && e.msg.type === "result")
      .map((e) => e.msg.chunk_ms as number);
    expect(recorded.length).toBeGreaterThan(0);
    expect(session.latency.all()).toEqual(recorded);
  });

  it("condition switches land at chunk boundaries only", () => {
    const { sent, session } = runReplay();
    const kinds = sent.map((t) => JSON.parse(t).type as string);
    kinds.forEach((kind, i) => {
      if (kind === "condition") expect(kinds[i + 1]).toBe("chunk");
    });
    // recorded switch boundaries match what the session tracked
    const expected: number[] = [];
    let chunkIndex = 0;
    for (const { dir, msg } of entries) {
      if (dir !== "send") continue;
      if (msg.type === "condition") expected.push(chunkIndex);
      if (msg.type === "chunk") chunkIndex += 1;
    }
    expect(session.switches.map((s) => s.chunkIndex)).toEqual(expected);
    expect(expected.length).toBeGreaterThan(0);
  });

  it("results decode to frames in the model's shape and range", () => {
    const { results, session } = runReplay();
    expect(results.length).toBeGreaterThan(0);
    expect(session.outputShape).toEqual(outputShape);
    const count = outputShape.reduce((a, b) => a * b, 1);
    for (const { frames } of results) {
      expect(frames.length).toBe(count);
      for (const v of frames) {
        expect(Number.isFinite(v)).toBe(true);
        expect(v).toBeGreaterThanOrEqual(-0.001);
        expect(v).toBeLessThanOrEqual(1.001);
      }
    }
  });
});
