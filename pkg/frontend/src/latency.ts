// Rolling per-chunk latency statistics for the chart. Values are the
// server-reported chunk_ms, kept verbatim: the chart must reproduce the
// server's numbers, not re-measure round trips.

export class LatencyLog {
  readonly windowSize: number;
  private samples: number[] = [];

  constructor(windowSize = 50) {
    if (windowSize < 1) throw new Error("windowSize must be >= 1");
    this.windowSize = windowSize;
  }

  record(chunkMs: number): void {
    this.samples.push(chunkMs);
  }

  get count(): number {
    return this.samples.length;
  }

  /** All recorded values, oldest first. */
  all(): readonly number[] {
    return this.samples;
  }

  /** The last windowSize values, oldest first. */
  window(): readonly number[] {
    return this.samples.slice(-this.windowSize);
  }

  mean(): number {
    const w = this.window();
    if (w.length === 0) return 0;
    return w.reduce((a, b) => a + b, 0) / w.length;
  }

  /** p in [0, 1]; nearest-rank on the rolling window. */
  percentile(p: number): number {
    const w = [...this.window()].sort((a, b) => a - b);
    if (w.length === 0) return 0;
    const rank = Math.min(w.length - 1, Math.max(0, Math.ceil(p * w.length) - 1));
    return w[rank] as number;
  }

  clear(): void {
    this.samples = [];
  }
}
