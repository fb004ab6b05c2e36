import { describe, expect, it } from "vitest";
import { ConsoleSession, Shape } from "../src/session.js";
import { encodeFrames } from "../src/protocol.js";

const SHAPE: Shape = [2, 8, 8, 3];

function frames(fill: number): Float32Array {
  return new Float32Array(2 * 8 * 8 * 3).fill(fill);
}

function ready(session: ConsoleSession): void {
  session.handleMessage(JSON.stringify({
    type: "stats", event: "ready", height: 8, width: 8, chunk_frames: 2, channels: 3,
  }));
}

function resultFor(index: number, chunkMs: number): string {
  return JSON.stringify({
    type: "result", index, frames_b64: encodeFrames(frames(0.5)), chunk_ms: chunkMs,
  });
}

function makeSession() {
  const sent: Array<Record<string, unknown>> = [];
  const session = new ConsoleSession({ send: (t) => sent.push(JSON.parse(t)) });
  return { sent, session };
}

describe("ConsoleSession", () => {
  it("runs init -> ready -> chunk -> result", () => {
    const { sent, session } = makeSession();
    session.start({ steps: 4, effectLabel: 1 });
    expect(sent[0]).toMatchObject({ type: "init", steps: 4, effect_label: 1 });
    expect(session.state).toBe("waiting_ready");
    ready(session);
    expect(session.state).toBe("streaming");
    expect(session.outputShape).toEqual(SHAPE);
    const idx = session.sendChunk(frames(0.1), SHAPE);
    expect(idx).toBe(0);
    expect(sent[1]).toMatchObject({ type: "chunk", index: 0 });
    expect(session.canSendChunk).toBe(false);
    session.handleMessage(resultFor(0, 21.0));
    expect(session.canSendChunk).toBe(true);
    expect(session.latency.all()).toEqual([21.0]);
  });

  it("queues switches and emits one merged condition at the boundary", () => {
    const { sent, session } = makeSession();
    session.start();
    ready(session);
    session.sendChunk(frames(0.1), SHAPE);
    session.handleMessage(resultFor(0, 20));
    // rapid switches between boundaries: last writer wins per field
    session.setEffect(2);
    session.setEffect(3);
    const ref = frames(0.9).subarray(0, 8 * 8 * 3);
    session.setReference(ref);
    expect(session.hasPendingCondition).toBe(true);
    session.sendChunk(frames(0.2), SHAPE);
    const cond = sent.find((m) => m.type === "condition")!;
    expect(cond).toEqual({
      type: "condition", effect_label: 3, reference_b64: encodeFrames(ref),
    });
    // exactly one condition, immediately before the chunk that follows it
    const kinds = sent.map((m) => m.type);
    expect(kinds.filter((k) => k === "condition")).toHaveLength(1);
    expect(kinds[kinds.indexOf("condition") + 1]).toBe("chunk");
    expect(session.switches).toEqual([
      { chunkIndex: 1, effectLabel: 3, referenceSwapped: true },
    ]);
    expect(session.hasPendingCondition).toBe(false);
  });

  it("never sends a condition mid-chunk", () => {
    const { sent, session } = makeSession();
    session.start();
    ready(session);
    session.sendChunk(frames(0.1), SHAPE);
    session.setEffect(1);  // while chunk 0 is in flight
    expect(sent.map((m) => m.type)).toEqual(["init", "chunk"]);
    expect(() => session.sendChunk(frames(0.2), SHAPE)).toThrow(/in flight/);
    session.handleMessage(resultFor(0, 20));
    session.sendChunk(frames(0.2), SHAPE);
    expect(sent.map((m) => m.type)).toEqual(["init", "chunk", "condition", "chunk"]);
  });

  it("server error replies do not kill the session", () => {
    const errors: string[] = [];
    const session = new ConsoleSession({ send: () => {} }, {
      onError: (e) => errors.push(e.code),
    });
    session.start();
    ready(session);
    session.handleMessage(JSON.stringify({ type: "error", code: "bad-index", message: "x" }));
    expect(errors).toEqual(["bad-index"]);
    expect(session.state).toBe("streaming");
  });

  it("decodes results against the shape announced in the ready ack", () => {
    const errors: string[] = [];
    const got: number[] = [];
    const session = new ConsoleSession({ send: () => {} }, {
      onResult: (_msg, f) => got.push(f.length),
      onError: (e) => errors.push(e.code),
    });
    session.start();
    ready(session);
    session.sendChunk(frames(0.1), SHAPE);
    session.handleMessage(resultFor(0, 20));
    expect(got).toEqual([2 * 8 * 8 * 3]);
    // a payload that disagrees with the announced shape is a protocol breach
    session.sendChunk(frames(0.2), SHAPE);
    session.handleMessage(JSON.stringify({
      type: "result", index: 1, frames_b64: encodeFrames(frames(0.5).subarray(0, 10)),
      chunk_ms: 20,
    }));
    expect(errors).toEqual(["bad-server-frame"]);
    expect(session.state).toBe("failed");
  });

  it("reset clears counters, latency, and queued switches", () => {
    const { session } = makeSession();
    session.start();
    ready(session);
    session.sendChunk(frames(0.1), SHAPE);
    session.handleMessage(resultFor(0, 20));
    session.setEffect(2);
    session.reset();
    expect(session.state).toBe("idle");
    expect(session.chunkIndex).toBe(0);
    expect(session.latency.count).toBe(0);
    expect(session.switches).toEqual([]);
    expect(session.hasPendingCondition).toBe(false);
    // a fresh start on the same object behaves like a new connection
    session.start();
    ready(session);
    expect(session.sendChunk(frames(0.3), SHAPE)).toBe(0);
  });

  it("start() twice without reset is a bug", () => {
    const { session } = makeSession();
    session.start();
    expect(() => session.start()).toThrow(/state/);
  });
});
