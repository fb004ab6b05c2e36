// Deterministic toy input source: a couple of soft moving blobs over a
// gradient, in [0, 1], shaped [frames, h, w, 3]. Stands in for a camera so
// the console can stream without the Python data pipeline; seeded so tests
// can replay exact chunks.

import { Shape } from "./session.js";

function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

interface Blob {
  x: number;
  y: number;
  vx: number;
  vy: number;
  radius: number;
  color: [number, number, number];
}

export class ToySource {
  readonly height: number;
  readonly width: number;
  readonly chunkFrames: number;
  private blobs: Blob[];
  private t = 0;

  constructor(height: number, width: number, chunkFrames: number, seed = 1) {
    this.height = height;
    this.width = width;
    this.chunkFrames = chunkFrames;
    const rand = mulberry32(seed);
    this.blobs = Array.from({ length: 3 }, () => ({
      x: rand() * width,
      y: rand() * height,
      vx: (rand() - 0.5) * 0.9,
      vy: (rand() - 0.5) * 0.9,
      radius: 1.2 + rand() * 1.8,
      color: [0.35 + 0.65 * rand(), 0.35 + 0.65 * rand(), 0.35 + 0.65 * rand()],
    }));
  }

  get shape(): Shape {
    return [this.chunkFrames, this.height, this.width, 3];
  }

  private renderFrame(out: Float32Array, offset: number): void {
    const { height: h, width: w } = this;
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        const base = 0.1 + 0.15 * (x / Math.max(1, w - 1));
        let r = base, g = base, b = base;
        for (const blob of this.blobs) {
          const d2 = (x - blob.x) ** 2 + (y - blob.y) ** 2;
          const k = Math.exp(-d2 / (2 * blob.radius * blob.radius));
          r += k * (blob.color[0] - r);
          g += k * (blob.color[1] - g);
          b += k * (blob.color[2] - b);
        }
        const i = offset + 3 * (y * w + x);
        out[i] = Math.min(1, Math.max(0, r));
        out[i + 1] = Math.min(1, Math.max(0, g));
        out[i + 2] = Math.min(1, Math.max(0, b));
      }
    }
  }

  private step(): void {
    for (const blob of this.blobs) {
      blob.x += blob.vx;
      blob.y += blob.vy;
      // reflect off the frame edges
      if (blob.x < 0 || blob.x > this.width - 1) blob.vx = -blob.vx;
      if (blob.y < 0 || blob.y > this.height - 1) blob.vy = -blob.vy;
      blob.x = Math.min(this.width - 1, Math.max(0, blob.x));
      blob.y = Math.min(this.height - 1, Math.max(0, blob.y));
    }
    this.t += 1;
  }

  /** Render the next chunk of frames, advancing the world. */
  nextChunk(): Float32Array {
    const per = this.height * this.width * 3;
    const out = new Float32Array(this.chunkFrames * per);
    for (let f = 0; f < this.chunkFrames; f++) {
      this.renderFrame(out, f * per);
      this.step();
    }
    return out;
  }

  /** One reference frame, shaped [1, h, w, 3]: the current view, frozen. */
  captureReference(): Float32Array {
    const out = new Float32Array(this.height * this.width * 3);
    this.renderFrame(out, 0);
    return out;
  }
}
