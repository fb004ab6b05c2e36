// Canvas drawing: nearest-neighbor upscale for the tiny model frames and a
// rolling latency chart. The pixel conversion is pure so tests can check it
// without a DOM.

import { LatencyLog } from "./latency.js";
import { BoundarySwitch } from "./session.js";

/**
 * Convert one frame [h, w, 3] in [0, 1] (values outside are clamped) to
 * RGBA bytes for putImageData.
 */
export function frameToRGBA(frame: Float32Array, h: number, w: number,
                            frameIndex = 0): Uint8ClampedArray<ArrayBuffer> {
  const per = h * w * 3;
  const offset = frameIndex * per;
  if (frame.length < offset + per) {
    throw new Error(`frame buffer too small: ${frame.length} < ${offset + per}`);
  }
  const rgba = new Uint8ClampedArray(h * w * 4);
  for (let i = 0; i < h * w; i++) {
    rgba[4 * i] = (frame[offset + 3 * i] as number) * 255;
    rgba[4 * i + 1] = (frame[offset + 3 * i + 1] as number) * 255;
    rgba[4 * i + 2] = (frame[offset + 3 * i + 2] as number) * 255;
    rgba[4 * i + 3] = 255;
  }
  return rgba;
}

/** Draw a frame into a canvas, scaled up without smoothing. */
export function drawFrame(canvas: HTMLCanvasElement, frame: Float32Array,
                          h: number, w: number, frameIndex = 0): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const small = new OffscreenCanvas(w, h);
  const sctx = small.getContext("2d");
  if (!sctx) return;
  sctx.putImageData(new ImageData(frameToRGBA(frame, h, w, frameIndex), w, h), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(small, 0, 0, canvas.width, canvas.height);
}

/**
 * Chart geometry: map the last windowSize samples onto plot points.
 * Exposed separately from the canvas drawing so the mapping is testable.
 */
export function chartPoints(values: readonly number[], width: number, height: number,
                            yMax: number): Array<[number, number]> {
  if (values.length === 0) return [];
  const dx = values.length > 1 ? width / (values.length - 1) : 0;
  return values.map((v, i) => {
    const y = height - Math.min(1, v / yMax) * height;
    return [i * dx, y] as [number, number];
  });
}

export function drawLatencyChart(canvas: HTMLCanvasElement, log: LatencyLog,
                                 switches: readonly BoundarySwitch[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width: cw, height: ch } = canvas;
  ctx.clearRect(0, 0, cw, ch);
  const window = log.window();
  if (window.length === 0) return;
  const yMax = Math.max(...window) * 1.25;
  const firstShown = log.count - window.length;

  // boundary markers for condition switches that fall inside the window
  ctx.strokeStyle = "#b8860b";
  for (const sw of switches) {
    if (sw.chunkIndex < firstShown || sw.chunkIndex >= log.count) continue;
    const x = window.length > 1
      ? ((sw.chunkIndex - firstShown) / (window.length - 1)) * cw
      : 0;
    ctx.beginPath();
    ctx.moveTo(x, 0);
    ctx.lineTo(x, ch);
    ctx.stroke();
  }

  ctx.strokeStyle = "#2e8b57";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  for (const [x, y] of chartPoints(window, cw, ch, yMax)) {
    ctx.lineTo(x, y);
  }
  ctx.stroke();

  ctx.fillStyle = "#ddd";
  ctx.font = "11px monospace";
  ctx.fillText(`mean ${log.mean().toFixed(1)} ms  p95 ${log.percentile(0.95).toFixed(1)} ms`, 6, 13);
}
