/** Display-only conditioning. These run on copies of the visible window
 * right before drawing; the recorder's stored stream never sees them. */

/** Least-squares line removal: kills DC offset and slow drift so traces sit
 * on their row regardless of electrode offset. */
export function detrend(x: Float64Array): Float64Array {
  const n = x.length;
  const out = new Float64Array(n);
  if (n === 0) {
    return out;
  }
  if (n === 1) {
    return out; // single point detrends to zero
  }
  // Regress against 0..n-1; the running index is exact in doubles here.
  let sy = 0;
  let sxy = 0;
  for (let i = 0; i < n; i++) {
    sy += x[i];
    sxy += i * x[i];
  }
  const sx = ((n - 1) * n) / 2;
  const sxx = ((n - 1) * n * (2 * n - 1)) / 6;
  const denom = n * sxx - sx * sx;
  const slope = denom === 0 ? 0 : (n * sxy - sx * sy) / denom;
  const intercept = sy / n - (slope * sx) / n;
  for (let i = 0; i < n; i++) {
    out[i] = x[i] - (intercept + slope * i);
  }
  return out;
}

interface Biquad {
  b0: number;
  b1: number;
  b2: number;
  a1: number;
  a2: number;
}

/** Notch biquad (constant-skirt, unity passband gain). */
function notchCoefficients(rateHz: number, freqHz: number, q: number): Biquad {
  const w0 = (2 * Math.PI * freqHz) / rateHz;
  const alpha = Math.sin(w0) / (2 * q);
  const cosw0 = Math.cos(w0);
  const a0 = 1 + alpha;
  return {
    b0: 1 / a0,
    b1: (-2 * cosw0) / a0,
    b2: 1 / a0,
    a1: (-2 * cosw0) / a0,
    a2: (1 - alpha) / a0,
  };
}

function biquadForward(x: Float64Array, c: Biquad): Float64Array {
  const out = new Float64Array(x.length);
  let x1 = 0;
  let x2 = 0;
  let y1 = 0;
  let y2 = 0;
  for (let i = 0; i < x.length; i++) {
    const y = c.b0 * x[i] + c.b1 * x1 + c.b2 * x2 - c.a1 * y1 - c.a2 * y2;
    out[i] = y;
    x2 = x1;
    x1 = x[i];
    y2 = y1;
    y1 = y;
  }
  return out;
}

/** Power-line notch, applied forward and backward over the window so the
 * display keeps zero phase. freqHz defaults to 50; pass 60 where that is
 * the mains frequency. */
export function notch(
  x: Float64Array,
  rateHz: number,
  freqHz = 50,
  q = 8,
): Float64Array {
  if (x.length === 0 || freqHz >= rateHz / 2) {
    return Float64Array.from(x);
  }
  const c = notchCoefficients(rateHz, freqHz, q);
  const forward = biquadForward(x, c);
  forward.reverse();
  const backward = biquadForward(forward, c);
  backward.reverse();
  return backward;
}

/** RMS amplitude of one frequency component, for tests and the spectrum
 * readout: a single-bin Goertzel-style projection. */
export function toneRms(x: Float64Array, rateHz: number, freqHz: number): number {
  const n = x.length;
  if (n === 0) {
    return 0;
  }
  let re = 0;
  let im = 0;
  const w = (2 * Math.PI * freqHz) / rateHz;
  for (let i = 0; i < n; i++) {
    re += x[i] * Math.cos(w * i);
    im -= x[i] * Math.sin(w * i);
  }
  // amplitude of the projected sinusoid, as RMS
  return Math.sqrt(re * re + im * im) * (2 / n) / Math.SQRT2;
}
