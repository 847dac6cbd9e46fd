/** Client-side buffering of the decimated display stream. */

import { Batch } from "./types.js";

/** Ring buffer of the last `capacity` display points across all channels.
 * Stores time in seconds relative to the first point so plotting math stays
 * in small doubles even when timestamps are UTC microseconds. */
export class TraceBuffer {
  readonly channels: number;
  private readonly capacity: number;
  private readonly t: Float64Array;
  private readonly ch: Float64Array[];
  private head = 0; // next write slot
  private count = 0;
  private t0Us: number | null = null;

  constructor(channels: number, capacity: number) {
    if (channels < 1 || capacity < 2) {
      throw new Error("need at least one channel and two slots");
    }
    this.channels = channels;
    this.capacity = capacity;
    this.t = new Float64Array(capacity);
    this.ch = [];
    for (let c = 0; c < channels; c++) {
      this.ch.push(new Float64Array(capacity));
    }
  }

  get length(): number {
    return this.count;
  }

  append(batch: Batch): void {
    const n = batch.t.length;
    for (let i = 0; i < n; i++) {
      if (this.t0Us === null) {
        this.t0Us = batch.t[i];
      }
      const slot = this.head;
      this.t[slot] = (batch.t[i] - this.t0Us) / 1e6;
      const row = batch.ch[i];
      for (let c = 0; c < this.channels; c++) {
        this.ch[c][slot] = row[c] ?? 0;
      }
      this.head = slot + 1 === this.capacity ? 0 : slot + 1;
      if (this.count < this.capacity) {
        this.count++;
      }
    }
  }

  /** Latest points spanning at most `seconds`, oldest first. Returns copies,
   * so display filtering can never touch the buffer. */
  window(seconds: number): { t: Float64Array; ch: Float64Array[] } {
    const n = this.count;
    if (n === 0) {
      return { t: new Float64Array(0), ch: this.ch.map(() => new Float64Array(0)) };
    }
    const newest = (this.head - 1 + this.capacity) % this.capacity;
    const tEnd = this.t[newest];
    // Walk back until the span is exceeded.
    let take = 1;
    while (take < n) {
      const idx = (newest - take + this.capacity) % this.capacity;
      if (tEnd - this.t[idx] > seconds) {
        break;
      }
      take++;
    }
    const t = new Float64Array(take);
    const ch = this.ch.map(() => new Float64Array(take));
    for (let i = 0; i < take; i++) {
      const idx = (newest - (take - 1) + i + this.capacity) % this.capacity;
      t[i] = this.t[idx];
      for (let c = 0; c < this.channels; c++) {
        ch[c][i] = this.ch[c][idx];
      }
    }
    return { t, ch };
  }
}

/** Min/max decimation to at most 2*buckets points, order preserved, so a
 * polyline through the result hits every extreme the full data hits. */
export function minMaxDecimate(
  t: Float64Array,
  y: Float64Array,
  buckets: number,
): { t: number[]; y: number[] } {
  const n = t.length;
  if (n <= 2 * buckets) {
    return { t: Array.from(t), y: Array.from(y) };
  }
  const outT: number[] = [];
  const outY: number[] = [];
  const per = n / buckets;
  for (let b = 0; b < buckets; b++) {
    const start = Math.floor(b * per);
    const end = Math.min(n, Math.floor((b + 1) * per));
    if (start >= end) {
      continue;
    }
    let minI = start;
    let maxI = start;
    for (let i = start + 1; i < end; i++) {
      if (y[i] < y[minI]) minI = i;
      if (y[i] > y[maxI]) maxI = i;
    }
    const first = Math.min(minI, maxI);
    const second = Math.max(minI, maxI);
    outT.push(t[first]);
    outY.push(y[first]);
    if (second !== first) {
      outT.push(t[second]);
      outY.push(y[second]);
    }
  }
  return { t: outT, y: outY };
}
