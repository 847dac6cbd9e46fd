/** Canvas rendering: stacked time-domain traces and a spectrum panel. */

import { notch, detrend } from "./filter.js";
import { TraceBuffer, minMaxDecimate } from "./stream.js";
import { Spectrum, spectrumDb } from "./spectrum.js";

export interface DisplayOptions {
  pointRateHz: number; // display points per second (decimated rate)
  uvPerDiv: number;
  secondsVisible: number;
  filterOn: boolean;
  detrendOn: boolean;
  mainsHz: number;
}

/** The display conditioning chain. Order matters: the notch assumes a
 * roughly zero-mean signal, so drift comes off first. Pure; the input
 * window is never modified. */
export function conditionTrace(
  y: Float64Array,
  pointRateHz: number,
  opts: { filterOn: boolean; detrendOn: boolean; mainsHz?: number },
): Float64Array {
  let out = opts.detrendOn ? detrend(y) : Float64Array.from(y);
  if (opts.filterOn) {
    out = notch(out, pointRateHz, opts.mainsHz ?? 50);
  }
  return out;
}

const TRACE_COLORS = [
  "#4dc9f6", "#f67019", "#f53794", "#537bc4",
  "#acc236", "#166a8f", "#00a950", "#58595b",
];

const VERTICAL_DIVS = 8; // per channel band

export class WaveformView {
  private readonly ctx: CanvasRenderingContext2D;

  constructor(private readonly canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (!ctx) {
      throw new Error("canvas 2d context unavailable");
    }
    this.ctx = ctx;
  }

  render(buf: TraceBuffer, opts: DisplayOptions): void {
    const { ctx, canvas } = this;
    const w = canvas.width;
    const h = canvas.height;
    ctx.fillStyle = "#101418";
    ctx.fillRect(0, 0, w, h);

    const win = buf.window(opts.secondsVisible);
    const band = h / buf.channels;
    const pxPerVolt = band / VERTICAL_DIVS / (opts.uvPerDiv * 1e-6);

    this.grid(w, h, buf.channels, opts.secondsVisible);

    const tEnd = win.t.length ? win.t[win.t.length - 1] : 0;
    const tStart = tEnd - opts.secondsVisible;
    for (let c = 0; c < buf.channels; c++) {
      const mid = band * c + band / 2;
      const y = conditionTrace(win.ch[c], opts.pointRateHz, opts);
      const pts = minMaxDecimate(win.t, y, w);
      ctx.strokeStyle = TRACE_COLORS[c % TRACE_COLORS.length];
      ctx.lineWidth = 1;
      ctx.beginPath();
      for (let i = 0; i < pts.t.length; i++) {
        const px = ((pts.t[i] - tStart) / opts.secondsVisible) * w;
        const py = mid - pts.y[i] * pxPerVolt;
        if (i === 0) {
          ctx.moveTo(px, py);
        } else {
          ctx.lineTo(px, py);
        }
      }
      ctx.stroke();
      ctx.fillStyle = "#8a939c";
      ctx.font = "11px system-ui, sans-serif";
      ctx.fillText("ch " + (c + 1), 4, band * c + 12);
    }

    ctx.fillStyle = "#8a939c";
    ctx.fillText(
      opts.uvPerDiv + " uV/div   " + opts.secondsVisible + " s",
      w - 130,
      12,
    );
  }

  private grid(w: number, h: number, channels: number, seconds: number): void {
    const { ctx } = this;
    ctx.strokeStyle = "#232a31";
    ctx.lineWidth = 1;
    const band = h / channels;
    for (let c = 0; c <= channels; c++) {
      ctx.beginPath();
      ctx.moveTo(0, band * c);
      ctx.lineTo(w, band * c);
      ctx.stroke();
    }
    // one vertical line per time division (10 divisions)
    for (let i = 1; i < 10; i++) {
      const x = (i / 10) * w;
      ctx.beginPath();
      ctx.moveTo(x, 0);
      ctx.lineTo(x, h);
      ctx.stroke();
    }
    ctx.fillStyle = "#5b636b";
    ctx.font = "10px system-ui, sans-serif";
    ctx.fillText((seconds / 10).toPrecision(2) + " s/div", 4, h - 4);
  }
}

export class SpectrumView {
  private readonly ctx: CanvasRenderingContext2D;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly maxHz = 100,
  ) {
    const ctx = canvas.getContext("2d");
    if (!ctx) {
      throw new Error("canvas 2d context unavailable");
    }
    this.ctx = ctx;
  }

  /** Spectrum of one channel of the visible (conditioned) window. */
  render(
    buf: TraceBuffer,
    channel: number,
    opts: DisplayOptions,
  ): Spectrum | null {
    const { ctx, canvas } = this;
    const w = canvas.width;
    const h = canvas.height;
    ctx.fillStyle = "#101418";
    ctx.fillRect(0, 0, w, h);
    const win = buf.window(opts.secondsVisible);
    if (win.t.length < 16) {
      return null;
    }
    const y = conditionTrace(win.ch[channel] ?? win.ch[0], opts.pointRateHz, opts);
    const spec = spectrumDb(y, opts.pointRateHz);
    const hi = Math.min(this.maxHz, opts.pointRateHz / 2);
    const dbTop = -60; // 1 mV RMS
    const dbBottom = -160;
    ctx.strokeStyle = "#232a31";
    for (let f = 10; f < hi; f += 10) {
      const x = (f / hi) * w;
      ctx.beginPath();
      ctx.moveTo(x, 0);
      ctx.lineTo(x, h);
      ctx.stroke();
    }
    ctx.strokeStyle = "#7ce0a3";
    ctx.lineWidth = 1;
    ctx.beginPath();
    let started = false;
    for (let k = 0; k < spec.freqHz.length; k++) {
      if (spec.freqHz[k] > hi) {
        break;
      }
      const x = (spec.freqHz[k] / hi) * w;
      const frac = (spec.db[k] - dbBottom) / (dbTop - dbBottom);
      const py = h - Math.max(0, Math.min(1, frac)) * h;
      if (!started) {
        ctx.moveTo(x, py);
        started = true;
      } else {
        ctx.lineTo(x, py);
      }
    }
    ctx.stroke();
    ctx.fillStyle = "#8a939c";
    ctx.font = "11px system-ui, sans-serif";
    ctx.fillText("spectrum ch " + (channel + 1) + "  0-" + hi + " Hz", 4, 12);
    return spec;
  }
}
