// Console-side session state machine. Transport-agnostic: main.ts feeds it
// a WebSocket, tests feed it a capturing fake. All timing-sensitive policy
// lives here so it can be replayed deterministically:
//
//  - condition switches requested by the operator are queued and emitted
//    only at a chunk boundary, as a single message immediately before the
//    next chunk (last writer wins while queued);
//  - at most one chunk is in flight, so the latency chart is driven purely
//    by the server's chunk_ms values, in order.

import {
  ChunkMessage,
  ClientMessage,
  ConditionMessage,
  ErrorMessage,
  InitMessage,
  ProtocolError,
  ResultMessage,
  StatsMessage,
  decodeFrames,
  encodeFrames,
  parseServerMessage,
  serializeClientMessage,
} from "./protocol.js";
import { LatencyLog } from "./latency.js";

export type Shape = [number, number, number, number];

export interface Transport {
  send(text: string): void;
}

export interface SessionOptions {
  window?: number;
  steps?: number;
  cfgScale?: number;
  effectLabel?: number;
}

export interface BoundarySwitch {
  chunkIndex: number;
  effectLabel?: number;
  referenceSwapped: boolean;
}

export interface SessionEvents {
  onReady?(stats: StatsMessage): void;
  onResult?(msg: ResultMessage, frames: Float32Array): void;
  onStats?(msg: StatsMessage): void;
  onError?(msg: ErrorMessage): void;
}

export type SessionState = "idle" | "waiting_ready" | "streaming" | "failed";

interface PendingCondition {
  effect_label?: number;
  reference_b64?: string;
}

export class ConsoleSession {
  readonly latency = new LatencyLog(50);
  /** Boundaries where a condition switch was emitted, for chart markers. */
  readonly switches: BoundarySwitch[] = [];

  private state_: SessionState = "idle";
  private transport: Transport;
  private events: SessionEvents;
  private pending: PendingCondition | null = null;
  private nextIndex = 0;
  private inFlight = false;
  // results carry no shape on the wire; fixed per session, set by the ready ack
  private outputShape_: Shape | null = null;

  constructor(transport: Transport, events: SessionEvents = {}) {
    this.transport = transport;
    this.events = events;
  }

  get state(): SessionState {
    return this.state_;
  }

  get chunkIndex(): number {
    return this.nextIndex;
  }

  get canSendChunk(): boolean {
    return this.state_ === "streaming" && !this.inFlight;
  }

  get outputShape(): Shape | null {
    return this.outputShape_;
  }

  private emit(msg: ClientMessage): void {
    this.transport.send(serializeClientMessage(msg));
  }

  start(opts: SessionOptions = {}, reference?: Float32Array): void {
    if (this.state_ !== "idle") throw new Error(`start() in state ${this.state_}`);
    const msg: InitMessage = { type: "init" };
    if (opts.window !== undefined) msg.window = opts.window;
    if (opts.steps !== undefined) msg.steps = opts.steps;
    if (opts.cfgScale !== undefined) msg.cfg_scale = opts.cfgScale;
    if (opts.effectLabel !== undefined) msg.effect_label = opts.effectLabel;
    if (reference !== undefined) msg.reference_b64 = encodeFrames(reference);
    this.emit(msg);
    this.state_ = "waiting_ready";
  }

  /** Queue an effect switch; takes effect at the next chunk boundary. */
  setEffect(label: number): void {
    this.pending = { ...this.pending, effect_label: label };
  }

  /** Queue a reference swap; takes effect at the next chunk boundary. */
  setReference(frame: Float32Array): void {
    this.pending = { ...this.pending, reference_b64: encodeFrames(frame) };
  }

  get hasPendingCondition(): boolean {
    return this.pending !== null;
  }

  /**
   * Send one input chunk. Emits the queued condition switch (if any) first,
   * so the switch lands exactly at this chunk's boundary.
   */
  sendChunk(frames: Float32Array, shape: Shape): number {
    if (this.state_ !== "streaming") throw new Error(`sendChunk() in state ${this.state_}`);
    if (this.inFlight) throw new Error("previous chunk still in flight");
    if (this.pending !== null) {
      const cond: ConditionMessage = { type: "condition", ...this.pending };
      this.emit(cond);
      this.switches.push({
        chunkIndex: this.nextIndex,
        effectLabel: this.pending.effect_label,
        referenceSwapped: this.pending.reference_b64 !== undefined,
      });
      this.pending = null;
    }
    const index = this.nextIndex;
    const msg: ChunkMessage = {
      type: "chunk",
      index,
      frames_b64: encodeFrames(frames),
      shape,
    };
    this.emit(msg);
    this.nextIndex += 1;
    this.inFlight = true;
    return index;
  }

  requestStats(): void {
    if (this.state_ === "idle" || this.state_ === "failed") {
      throw new Error(`requestStats() in state ${this.state_}`);
    }
    this.emit({ type: "stats" });
  }

  private fail(message: string): void {
    this.state_ = "failed";
    this.events.onError?.({ type: "error", code: "bad-server-frame", message });
  }

  /** Feed one raw server text frame. */
  handleMessage(text: string): void {
    let msg;
    try {
      msg = parseServerMessage(text);
    } catch (err) {
      if (err instanceof ProtocolError) {
        this.fail(err.message);
        return;
      }
      throw err;
    }
    switch (msg.type) {
      case "result": {
        if (this.outputShape_ === null) {
          this.fail("result before ready ack");
          return;
        }
        let frames: Float32Array;
        try {
          frames = decodeFrames(msg.frames_b64, this.outputShape_);
        } catch (err) {
          if (err instanceof ProtocolError) {
            this.fail(err.message);
            return;
          }
          throw err;
        }
        this.inFlight = false;
        this.latency.record(msg.chunk_ms);
        this.events.onResult?.(msg, frames);
        break;
      }
      case "stats": {
        if (this.state_ === "waiting_ready" && msg.event === "ready") {
          const dims = ["chunk_frames", "height", "width", "channels"].map((k) => msg[k]);
          if (!dims.every((d) => typeof d === "number" && Number.isInteger(d) && d > 0)) {
            this.fail("ready ack is missing output dimensions");
            return;
          }
          this.outputShape_ = dims as Shape;
          this.state_ = "streaming";
          this.events.onReady?.(msg);
        } else {
          this.events.onStats?.(msg);
        }
        break;
      }
      case "error": {
        // the server keeps the connection usable after an error reply, so
        // surface it but do not tear the session down
        this.events.onError?.(msg);
        break;
      }
    }
  }

  /** Reset for a fresh connection (reconnect): counters, latency, switches. */
  reset(): void {
    this.state_ = "idle";
    this.pending = null;
    this.nextIndex = 0;
    this.inFlight = false;
    this.outputShape_ = null;
    this.latency.clear();
    this.switches.length = 0;
  }
}
