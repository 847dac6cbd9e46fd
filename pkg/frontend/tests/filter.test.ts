import { describe, expect, it } from "vitest";
import { detrend, notch, toneRms } from "../src/filter.js";

function tone(n: number, rateHz: number, freqHz: number, amp: number): Float64Array {
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    out[i] = amp * Math.sin((2 * Math.PI * freqHz * i) / rateHz);
  }
  return out;
}

function add(a: Float64Array, b: Float64Array): Float64Array {
  const out = new Float64Array(a.length);
  for (let i = 0; i < a.length; i++) {
    out[i] = a[i] + b[i];
  }
  return out;
}

describe("notch", () => {
  const rate = 2000; // display point rate at 4 kHz sampling

  it("suppresses 50 Hz by at least 20 dB while sparing 10 Hz", () => {
    const n = 2 * rate;
    const x = add(tone(n, rate, 10, 40e-6), tone(n, rate, 50, 25e-6));
    const y = notch(x, rate, 50);
    const before50 = toneRms(x, rate, 50);
    const after50 = toneRms(y, rate, 50);
    const drop = 20 * Math.log10(before50 / after50);
    expect(drop).toBeGreaterThan(20);
    const before10 = toneRms(x, rate, 10);
    const after10 = toneRms(y, rate, 10);
    expect(after10 / before10).toBeGreaterThan(0.9);
    expect(after10 / before10).toBeLessThan(1.1);
  });

  it("never modifies its input (stored data stays raw)", () => {
    const x = add(tone(512, rate, 10, 1e-5), tone(512, rate, 50, 1e-5));
    const copy = Float64Array.from(x);
    notch(x, rate, 50);
    expect(Array.from(x)).toEqual(Array.from(copy));
  });

  it("passes data through when the notch sits above Nyquist", () => {
    const x = tone(256, 80, 10, 1e-5);
    const y = notch(x, 80, 50);
    expect(Array.from(y)).toEqual(Array.from(x));
  });
});

describe("detrend", () => {
  it("removes a linear ramp exactly", () => {
    const n = 500;
    const x = new Float64Array(n);
    for (let i = 0; i < n; i++) {
      x[i] = 3e-6 + 2e-9 * i;
    }
    const y = detrend(x);
    for (let i = 0; i < n; i += 100) {
      expect(Math.abs(y[i])).toBeLessThan(1e-18);
    }
  });

  it("keeps an AC component on top of drift", () => {
    const rate = 2000;
    const n = 2 * rate;
    const x = tone(n, rate, 10, 30e-6);
    for (let i = 0; i < n; i++) {
      x[i] += 100e-6 + 5e-8 * i;
    }
    const y = detrend(x);
    const kept = toneRms(y, rate, 10) / toneRms(tone(n, rate, 10, 30e-6), rate, 10);
    expect(kept).toBeGreaterThan(0.95);
    expect(kept).toBeLessThan(1.05);
  });

  it("handles empty and single-point windows", () => {
    expect(detrend(new Float64Array(0)).length).toBe(0);
    expect(Array.from(detrend(Float64Array.of(5)))).toEqual([0]);
  });
});
