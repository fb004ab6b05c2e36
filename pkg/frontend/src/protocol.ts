// Wire types for the stream server. One JSON object per WebSocket text
// frame; the raw-TCP transport carries the same JSON behind a length
// prefix, but the browser only ever sees the WebSocket side.
//
// Frame payloads are base64 of raw little-endian float32, shape
// [frames, height, width, channels].

export interface InitMessage {
  type: "init";
  window?: number;
  steps?: number;
  cfg_scale?: number;
  effect_label?: number;
  reference_b64?: string;
}

export interface ChunkMessage {
  type: "chunk";
  index: number;
  frames_b64: string;
  shape: [number, number, number, number];
}

export interface ConditionMessage {
  type: "condition";
  effect_label?: number;
  reference_b64?: string;
}

export interface StatsRequest {
  type: "stats";
}

export type ClientMessage = InitMessage | ChunkMessage | ConditionMessage | StatsRequest;

// Results carry no shape; the output shape is fixed for the session and
// announced in the ready stats (chunk_frames, height, width, channels).
export interface ResultMessage {
  type: "result";
  index: number;
  frames_b64: string;
  chunk_ms: number;
}

export interface StatsMessage {
  type: "stats";
  [key: string]: unknown;
}

export interface ErrorMessage {
  type: "error";
  code: string;
  message: string;
}

export type ServerMessage = ResultMessage | StatsMessage | ErrorMessage;

export class ProtocolError extends Error {}

export function encodeFrames(data: Float32Array): string {
  const bytes = new Uint8Array(data.length * 4);
  const view = new DataView(bytes.buffer);
  for (let i = 0; i < data.length; i++) {
    view.setFloat32(4 * i, data[i] as number, true);
  }
  let bin = "";
  // chunked so very long streams do not blow the argument limit
  const step = 0x8000;
  for (let i = 0; i < bytes.length; i += step) {
    bin += String.fromCharCode(...bytes.subarray(i, i + step));
  }
  return btoa(bin);
}

export function decodeFrames(b64: string, shape: readonly number[]): Float32Array {
  let bin: string;
  try {
    bin = atob(b64);
  } catch {
    throw new ProtocolError("frames_b64 is not valid base64");
  }
  const count = shape.reduce((a, b) => a * b, 1);
  if (bin.length !== 4 * count) {
    throw new ProtocolError(`payload is ${bin.length} bytes, shape wants ${4 * count}`);
  }
  const bytes = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) bytes[i] = bin.charCodeAt(i);
  const view = new DataView(bytes.buffer);
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = view.getFloat32(4 * i, true);
  return out;
}

function requireNumber(msg: Record<string, unknown>, key: string): number {
  const v = msg[key];
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new ProtocolError(`${key} must be a finite number`);
  }
  return v;
}

function requireString(msg: Record<string, unknown>, key: string): string {
  const v = msg[key];
  if (typeof v !== "string") throw new ProtocolError(`${key} must be a string`);
  return v;
}

/** Parse and validate one server->client message. */
export function parseServerMessage(text: string): ServerMessage {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch {
    throw new ProtocolError("not valid JSON");
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new ProtocolError("message must be a JSON object");
  }
  const msg = raw as Record<string, unknown>;
  switch (msg.type) {
    case "result": {
      const index = requireNumber(msg, "index");
      if (!Number.isInteger(index) || index < 0) {
        throw new ProtocolError("result.index must be a non-negative integer");
      }
      requireString(msg, "frames_b64");
      requireNumber(msg, "chunk_ms");
      return msg as unknown as ResultMessage;
    }
    case "stats":
      return msg as StatsMessage;
    case "error": {
      requireString(msg, "code");
      requireString(msg, "message");
      return msg as unknown as ErrorMessage;
    }
    default:
      throw new ProtocolError(`unknown server message type ${String(msg.type)}`);
  }
}

export function serializeClientMessage(msg: ClientMessage): string {
  return JSON.stringify(msg);
}
