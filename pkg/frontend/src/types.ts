/** Wire shapes of the recorder's control API (docs/control-api.md). */

/** First server-sent event on /stream. */
export interface Hello {
  session_id: string;
  rate_hz: number;
  device_count: number;
  channels: number;
  gain: number;
  stride: number;
  points_per_second: number;
}

/** Decimated sample batch on /stream: one volts row per point. */
export interface Batch {
  t: number[];
  ch: number[][];
}

export interface StimulusEvent {
  label: string;
  t_utc_us: number;
  intensity: number | null;
  revoked: boolean;
}

/** GET /status body. Only the fields the console reads are typed. */
export interface Status {
  session_id: string;
  state: "idle" | "receiving" | "finalizing" | "done";
  device_count: number;
  channels: number;
  rate_hz: number;
  gain: number;
  save_enabled: boolean;
  packets: number;
  gaps: number;
  anomalies: number;
  samples: number;
  events: number;
  events_effective: number;
  t_first_us: number | null;
  t_last_us: number | null;
  engine_done: boolean;
  [key: string]: unknown;
}

export interface StimulateResponse {
  event: StimulusEvent;
  press_to_log_us: number;
}

export interface UndoResponse {
  revoked: StimulusEvent | null;
}
