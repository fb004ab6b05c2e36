// Operator console: connect to a running `streamfx serve`, stream a toy
// source through it, watch input/output side by side, switch conditions at
// chunk boundaries, and read the per-chunk latency chart.

import { ConsoleSession, Shape } from "./session.js";
import { ToySource } from "./source.js";
import { drawFrame, drawLatencyChart } from "./render.js";
import { StatsMessage } from "./protocol.js";

const $ = (id: string) => document.getElementById(id)!;

const EFFECTS = ["invert", "ring", "pulse", "checker"];

let ws: WebSocket | null = null;
let session: ConsoleSession | null = null;
let source: ToySource | null = null;
let shape: Shape | null = null;
let running = false;

function setStatus(text: string): void {
  $("status").textContent = text;
}

function logError(text: string): void {
  const el = $("errors");
  el.textContent = `${text}\n${el.textContent}`.slice(0, 2000);
}

function renderStats(msg: StatsMessage): void {
  $("stats").textContent = JSON.stringify(msg, null, 1);
}

function pump(): void {
  // one chunk in flight at a time; the result callback calls pump again
  if (!running || !session || !source || !shape) return;
  if (!session.canSendChunk) return;
  const frames = source.nextChunk();
  drawFrame($("input") as HTMLCanvasElement, frames, source.height, source.width,
            source.chunkFrames - 1);
  session.sendChunk(frames, shape);
}

function connect(): void {
  const url = ($("url") as HTMLInputElement).value;
  disconnect();
  setStatus(`connecting to ${url}`);
  ws = new WebSocket(url);
  session = new ConsoleSession(
    { send: (text) => ws?.send(text) },
    {
      onReady: (stats) => {
        const h = stats.height as number;
        const w = stats.width as number;
        const cf = stats.chunk_frames as number;
        source = new ToySource(h, w, cf, 7);
        shape = [cf, h, w, 3];
        running = true;
        setStatus(`streaming (${w}x${h}, ${String(stats.steps)} steps, `
                  + `effect ${String(stats.effect_label)})`);
        renderStats(stats);
        pump();
      },
      onResult: (msg, frames) => {
        const [cf, h, w] = session!.outputShape!;
        drawFrame($("output") as HTMLCanvasElement, frames, h, w, cf - 1);
        drawLatencyChart($("chart") as HTMLCanvasElement, session!.latency,
                         session!.switches);
        $("chunkinfo").textContent =
          `chunk ${msg.index}  ${msg.chunk_ms.toFixed(1)} ms`;
        pump();
      },
      onStats: renderStats,
      onError: (msg) => logError(`${msg.code}: ${msg.message}`),
    },
  );
  ws.onopen = () => {
    const effect = Number(($("effect") as HTMLSelectElement).value);
    const steps = Number(($("steps") as HTMLInputElement).value) || 4;
    session!.start({ steps, effectLabel: effect, cfgScale: 0 });
  };
  ws.onmessage = (ev) => session!.handleMessage(String(ev.data));
  ws.onclose = () => {
    running = false;
    setStatus("disconnected");
  };
  ws.onerror = () => logError("websocket error");
}

function disconnect(): void {
  running = false;
  ws?.close();
  ws = null;
  session = null;
  source = null;
  setStatus("idle");
}

function wire(): void {
  const effectSel = $("effect") as HTMLSelectElement;
  for (const [i, name] of EFFECTS.entries()) {
    const opt = document.createElement("option");
    opt.value = String(i);
    opt.textContent = `${i}: ${name}`;
    effectSel.appendChild(opt);
  }
  $("connect").addEventListener("click", connect);
  $("disconnect").addEventListener("click", disconnect);
  // switches queue in the session and land at the next chunk boundary
  effectSel.addEventListener("change", () => {
    session?.setEffect(Number(effectSel.value));
  });
  $("capture").addEventListener("click", () => {
    if (session && source) session.setReference(source.captureReference());
  });
  $("statsreq").addEventListener("click", () => session?.requestStats());
}

wire();
