/** Operator console wiring: one control client, one stream subscription,
 * and a render loop decoupled from message receipt by the trace buffer. */

import { ApiError, ControlClient } from "./api.js";
import {
  ConsoleState,
  SECONDS_STEPS,
  STIMULUS_CLASSES,
  UV_PER_DIV_STEPS,
  canStart,
  canStimulate,
  canStop,
  canToggleSave,
  canUndo,
  initialState,
} from "./state.js";
import { TraceBuffer } from "./stream.js";
import { Batch, Hello, StimulusEvent } from "./types.js";
import { SpectrumView, WaveformView } from "./waveform.js";

const BUFFER_SECONDS = 60;
const STATUS_POLL_MS = 1000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error("missing element #" + id);
  }
  return node as T;
}

interface LogEntry {
  event: StimulusEvent;
  latencyUs: number | null;
}

class Console {
  state: ConsoleState = initialState();
  client: ControlClient | null = null;
  buffer: TraceBuffer | null = null;
  hello: Hello | null = null;
  source: EventSource | null = null;
  log: LogEntry[] = [];
  spectrumChannel = 0;

  private waveform = new WaveformView(el<HTMLCanvasElement>("waveform"));
  private spectrum = new SpectrumView(el<HTMLCanvasElement>("spectrum"));
  private pollTimer: number | null = null;

  bind(): void {
    el<HTMLButtonElement>("connect").onclick = () => this.connect();
    el<HTMLButtonElement>("start").onclick = () => this.act(() => this.client!.start());
    el<HTMLButtonElement>("stop").onclick = () => this.stop();
    el<HTMLInputElement>("save").onchange = (ev) => {
      const box = ev.target as HTMLInputElement;
      this.act(() => this.client!.setSave(box.checked));
    };
    el<HTMLButtonElement>("stimulate").onclick = () => this.stimulate();
    el<HTMLButtonElement>("undo").onclick = () => this.undo();
    el<HTMLInputElement>("filter").onchange = (ev) => {
      this.state.filterOn = (ev.target as HTMLInputElement).checked;
    };
    el<HTMLInputElement>("detrend").onchange = (ev) => {
      this.state.detrendOn = (ev.target as HTMLInputElement).checked;
    };

    const classSel = el<HTMLSelectElement>("stimclass");
    for (const name of STIMULUS_CLASSES) {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = name;
      classSel.appendChild(opt);
    }
    classSel.onchange = () => {
      this.state.stimulusClass = classSel.value;
    };

    const amp = el<HTMLInputElement>("amplitude");
    amp.max = String(UV_PER_DIV_STEPS.length - 1);
    amp.value = String(UV_PER_DIV_STEPS.indexOf(this.state.uvPerDiv));
    amp.oninput = () => {
      this.state.uvPerDiv = UV_PER_DIV_STEPS[Number(amp.value)];
      this.refreshControls();
    };
    const secs = el<HTMLInputElement>("timerange");
    secs.max = String(SECONDS_STEPS.length - 1);
    secs.value = String(SECONDS_STEPS.indexOf(this.state.secondsVisible));
    secs.oninput = () => {
      this.state.secondsVisible = SECONDS_STEPS[Number(secs.value)];
      this.refreshControls();
    };
    el<HTMLSelectElement>("specchannel").onchange = (ev) => {
      this.spectrumChannel = Number((ev.target as HTMLSelectElement).value);
    };

    el<HTMLInputElement>("detrend").checked = this.state.detrendOn;
    this.refreshControls();
    const loop = () => {
      this.renderFrame();
      requestAnimationFrame(loop);
    };
    requestAnimationFrame(loop);
  }

  connect(): void {
    const base = el<HTMLInputElement>("endpoint").value.replace(/\/+$/, "");
    this.client = new ControlClient(base);
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
    }
    this.pollTimer = window.setInterval(() => this.poll(), STATUS_POLL_MS);
    this.poll();
    this.openStream();
  }

  /** One status round trip; connection state follows its outcome, so a
   * recorder that comes back is picked up by the next poll automatically. */
  async poll(): Promise<void> {
    if (!this.client) {
      return;
    }
    try {
      this.state.session = await this.client.status();
      if (!this.state.connected) {
        this.state.connected = true;
        this.openStream(); // stream died with the old connection
      }
    } catch {
      this.state.connected = false;
      this.state.session = null;
    }
    this.refreshControls();
  }

  openStream(): void {
    if (!this.client) {
      return;
    }
    if (this.source) {
      this.source.close();
    }
    const source = new EventSource(this.client.streamUrl());
    this.source = source;
    source.addEventListener("hello", (ev) => {
      const hello = JSON.parse((ev as MessageEvent).data) as Hello;
      this.hello = hello;
      this.buffer = new TraceBuffer(
        hello.channels,
        Math.max(1024, hello.points_per_second * BUFFER_SECONDS),
      );
      const sel = el<HTMLSelectElement>("specchannel");
      sel.innerHTML = "";
      for (let c = 0; c < hello.channels; c++) {
        const opt = document.createElement("option");
        opt.value = String(c);
        opt.textContent = "ch " + (c + 1);
        sel.appendChild(opt);
      }
      this.spectrumChannel = 0;
    });
    source.addEventListener("batch", (ev) => {
      if (this.buffer) {
        this.buffer.append(JSON.parse((ev as MessageEvent).data) as Batch);
      }
    });
    // EventSource retries on its own; the banner state comes from polling.
  }

  async act(call: () => Promise<unknown>): Promise<void> {
    if (!this.client) {
      return;
    }
    try {
      await call();
    } catch (err) {
      this.flash(err instanceof ApiError ? err.message : String(err));
    }
    this.poll();
  }

  async stimulate(): Promise<void> {
    if (!this.client || !canStimulate(this.state)) {
      return;
    }
    try {
      const resp = await this.client.stimulate(
        this.state.stimulusClass,
        this.state.intensity ?? undefined,
      );
      this.log.push({ event: resp.event, latencyUs: resp.press_to_log_us });
      el<HTMLSpanElement>("latency").textContent =
        "press to log " + (resp.press_to_log_us / 1000).toFixed(1) + " ms";
    } catch (err) {
      this.flash(err instanceof ApiError ? err.message : String(err));
    }
    this.poll();
    this.renderLog();
  }

  async undo(): Promise<void> {
    if (!this.client || !canUndo(this.state)) {
      return;
    }
    try {
      const resp = await this.client.undo();
      if (resp.revoked) {
        for (const entry of this.log) {
          if (entry.event.t_utc_us === resp.revoked.t_utc_us) {
            entry.event.revoked = true;
          }
        }
      }
    } catch (err) {
      this.flash(err instanceof ApiError ? err.message : String(err));
    }
    this.poll();
    this.renderLog();
  }

  async stop(): Promise<void> {
    if (!this.client) {
      return;
    }
    try {
      const report = await this.client.stop();
      this.flash("session finalized: " + String(report.path ?? ""));
    } catch (err) {
      this.flash(err instanceof ApiError ? err.message : String(err));
    }
    this.poll();
  }

  refreshControls(): void {
    const s = this.state;
    el<HTMLButtonElement>("start").disabled = !canStart(s);
    el<HTMLButtonElement>("stop").disabled = !canStop(s);
    el<HTMLButtonElement>("stimulate").disabled = !canStimulate(s);
    el<HTMLButtonElement>("undo").disabled = !canUndo(s);
    el<HTMLInputElement>("save").disabled = !canToggleSave(s);
    if (s.session) {
      el<HTMLInputElement>("save").checked = s.session.save_enabled;
    }
    el<HTMLDivElement>("banner").style.display = s.connected ? "none" : "block";
    el<HTMLSpanElement>("ampvalue").textContent = s.uvPerDiv + " uV/div";
    el<HTMLSpanElement>("timevalue").textContent = s.secondsVisible + " s";
    const line = s.session
      ? s.session.session_id +
        "  " + s.session.state +
        "  " + s.session.samples + " samples" +
        "  " + s.session.packets + " packets" +
        (s.session.gaps ? "  GAPS " + s.session.gaps : "") +
        (s.session.save_enabled ? "  saving" : "  not saving")
      : "no session";
    el<HTMLSpanElement>("status").textContent = line;
  }

  renderLog(): void {
    const list = el<HTMLUListElement>("eventlog");
    list.innerHTML = "";
    for (const entry of [...this.log].reverse()) {
      const li = document.createElement("li");
      const when = new Date(entry.event.t_utc_us / 1000).toISOString();
      li.textContent =
        when + "  " + entry.event.label +
        (entry.event.intensity !== null ? " (" + entry.event.intensity + ")" : "") +
        (entry.latencyUs !== null
          ? "  " + (entry.latencyUs / 1000).toFixed(1) + " ms"
          : "");
      if (entry.event.revoked) {
        li.classList.add("revoked");
      }
      list.appendChild(li);
    }
  }

  renderFrame(): void {
    if (!this.buffer || !this.hello) {
      return;
    }
    const opts = {
      pointRateHz: this.hello.points_per_second,
      uvPerDiv: this.state.uvPerDiv,
      secondsVisible: this.state.secondsVisible,
      filterOn: this.state.filterOn,
      detrendOn: this.state.detrendOn,
      mainsHz: 50,
    };
    this.waveform.render(this.buffer, opts);
    this.spectrum.render(this.buffer, this.spectrumChannel, opts);
  }

  flash(message: string): void {
    const node = el<HTMLDivElement>("flash");
    node.textContent = message;
    node.style.display = "block";
    window.setTimeout(() => {
      node.style.display = "none";
    }, 4000);
  }
}

window.addEventListener("load", () => {
  new Console().bind();
});
