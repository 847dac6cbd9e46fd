import { describe, expect, it } from "vitest";
import { TraceBuffer, minMaxDecimate } from "../src/stream.js";
import { Batch } from "../src/types.js";

function batchOf(tUs: number[], perChannel: number[][]): Batch {
  return { t: tUs, ch: perChannel };
}

describe("TraceBuffer", () => {
  it("returns the requested span, oldest first, in relative seconds", () => {
    const buf = new TraceBuffer(2, 100);
    buf.append(batchOf([1_000_000, 1_000_500, 1_001_000], [
      [1, 10],
      [2, 20],
      [3, 30],
    ]));
    const win = buf.window(10);
    expect(Array.from(win.t)).toEqual([0, 0.0005, 0.001]);
    expect(Array.from(win.ch[0])).toEqual([1, 2, 3]);
    expect(Array.from(win.ch[1])).toEqual([10, 20, 30]);
  });

  it("limits the window to the requested seconds", () => {
    const buf = new TraceBuffer(1, 100);
    const t: number[] = [];
    const rows: number[][] = [];
    for (let i = 0; i < 50; i++) {
      t.push(i * 100_000); // 10 points per second
      rows.push([i]);
    }
    buf.append(batchOf(t, rows));
    // 0.95 s sits between grid points, so the cut is unambiguous
    const win = buf.window(0.95);
    expect(win.t.length).toBe(10);
    expect(win.ch[0][win.t.length - 1]).toBe(49);
    expect(win.ch[0][0]).toBe(40);
  });

  it("wraps without losing the newest points", () => {
    const buf = new TraceBuffer(1, 8);
    for (let k = 0; k < 5; k++) {
      const t: number[] = [];
      const rows: number[][] = [];
      for (let i = 0; i < 3; i++) {
        const idx = k * 3 + i;
        t.push(idx * 1000);
        rows.push([idx]);
      }
      buf.append(batchOf(t, rows));
    }
    expect(buf.length).toBe(8);
    const win = buf.window(1);
    expect(win.ch[0][win.ch[0].length - 1]).toBe(14);
    // strictly increasing, no stale slots
    for (let i = 1; i < win.t.length; i++) {
      expect(win.t[i]).toBeGreaterThan(win.t[i - 1]);
    }
  });

  it("window copies are independent of the buffer", () => {
    const buf = new TraceBuffer(1, 10);
    buf.append(batchOf([0, 1000], [[1], [2]]));
    const win = buf.window(10);
    win.ch[0][0] = 999;
    expect(buf.window(10).ch[0][0]).toBe(1);
  });
});

describe("minMaxDecimate", () => {
  it("passes short data through unchanged", () => {
    const t = Float64Array.of(0, 1, 2);
    const y = Float64Array.of(5, -5, 5);
    const out = minMaxDecimate(t, y, 10);
    expect(out.t).toEqual([0, 1, 2]);
    expect(out.y).toEqual([5, -5, 5]);
  });

  it("keeps every bucket's extremes in time order", () => {
    const n = 10_000;
    const t = new Float64Array(n);
    const y = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      t[i] = i;
      y[i] = Math.sin(i / 7);
    }
    // one big spike that naive striding would miss
    y[5555] = 42;
    const out = minMaxDecimate(t, y, 200);
    expect(out.y.length).toBeLessThanOrEqual(400);
    expect(Math.max(...out.y)).toBe(42);
    for (let i = 1; i < out.t.length; i++) {
      expect(out.t[i]).toBeGreaterThanOrEqual(out.t[i - 1]);
    }
  });

  it("preserves both rails of a square wave", () => {
    const n = 8000;
    const t = new Float64Array(n);
    const y = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      t[i] = i;
      y[i] = Math.floor(i / 100) % 2 === 0 ? 1e-3 : -1e-3;
    }
    const out = minMaxDecimate(t, y, 150);
    expect(Math.max(...out.y)).toBe(1e-3);
    expect(Math.min(...out.y)).toBe(-1e-3);
    let flips = 0;
    for (let i = 1; i < out.y.length; i++) {
      if (Math.sign(out.y[i]) !== Math.sign(out.y[i - 1])) {
        flips++;
      }
    }
    expect(flips).toBeGreaterThanOrEqual(39); // 40 half-periods in the data
  });
});
