/** Spectrum of the visible window for the frequency-domain view. */

/** In-place iterative radix-2 FFT over interleaved re/im pairs. */
function fft(re: Float64Array, im: Float64Array): void {
  const n = re.length;
  if ((n & (n - 1)) !== 0) {
    throw new Error("fft length must be a power of two");
  }
  // bit-reversal permutation
  for (let i = 1, j = 0; i < n; i++) {
    let bit = n >> 1;
    for (; j & bit; bit >>= 1) {
      j ^= bit;
    }
    j ^= bit;
    if (i < j) {
      const tr = re[i];
      re[i] = re[j];
      re[j] = tr;
      const ti = im[i];
      im[i] = im[j];
      im[j] = ti;
    }
  }
  for (let len = 2; len <= n; len <<= 1) {
    const ang = (-2 * Math.PI) / len;
    const wr = Math.cos(ang);
    const wi = Math.sin(ang);
    for (let i = 0; i < n; i += len) {
      let cr = 1;
      let ci = 0;
      for (let k = 0; k < len / 2; k++) {
        const ur = re[i + k];
        const ui = im[i + k];
        const vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
        const vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
        re[i + k] = ur + vr;
        im[i + k] = ui + vi;
        re[i + k + len / 2] = ur - vr;
        im[i + k + len / 2] = ui - vi;
        const ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

export interface Spectrum {
  freqHz: Float64Array;
  db: Float64Array; // dB relative to 1 V RMS per bin
}

/** Hann-windowed amplitude spectrum, zero-padded to a power of two.
 * Amplitudes are window-gain corrected so a pure tone reads its RMS. */
export function spectrumDb(x: Float64Array, rateHz: number): Spectrum {
  const n = x.length;
  if (n < 8) {
    return { freqHz: new Float64Array(0), db: new Float64Array(0) };
  }
  let size = 8;
  while (size < n) {
    size <<= 1;
  }
  const re = new Float64Array(size);
  const im = new Float64Array(size);
  let windowSum = 0;
  for (let i = 0; i < n; i++) {
    const w = 0.5 - 0.5 * Math.cos((2 * Math.PI * i) / (n - 1));
    re[i] = x[i] * w;
    windowSum += w;
  }
  fft(re, im);
  const bins = size >> 1;
  const freqHz = new Float64Array(bins);
  const db = new Float64Array(bins);
  // single-sided amplitude, coherent window gain removed, as RMS
  const scale = 2 / windowSum / Math.SQRT2;
  for (let k = 0; k < bins; k++) {
    const mag = Math.hypot(re[k], im[k]) * scale;
    freqHz[k] = (k * rateHz) / size;
    db[k] = 20 * Math.log10(mag + 1e-15);
  }
  return { freqHz, db };
}

/** Index of the strongest bin in [loHz, hiHz]. */
export function peakFrequencyHz(s: Spectrum, loHz: number, hiHz: number): number {
  let best = -1;
  let bestDb = -Infinity;
  for (let k = 0; k < s.freqHz.length; k++) {
    if (s.freqHz[k] < loHz || s.freqHz[k] > hiHz) {
      continue;
    }
    if (s.db[k] > bestDb) {
      bestDb = s.db[k];
      best = k;
    }
  }
  return best < 0 ? NaN : s.freqHz[best];
}
