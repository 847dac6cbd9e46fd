/** Thin client over the recorder's control API. Every console action goes
 * through one of these methods; there is no other path to the recorder, so
 * the console can only do what the API documents. */

import { Status, StimulateResponse, UndoResponse } from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ControlClient {
  /** base is the control endpoint, e.g. "http://127.0.0.1:7802". A fetch
   * replacement can be injected for tests. */
  constructor(
    readonly base: string,
    private readonly fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async request<T>(path: string, body?: unknown): Promise<T> {
    const init: RequestInit =
      body === undefined
        ? { method: "POST" }
        : {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
          };
    const resp = await this.fetchFn(this.base + path, init);
    const data = await resp.json();
    if (!resp.ok) {
      throw new ApiError(resp.status, String(data.error ?? resp.status));
    }
    return data as T;
  }

  async status(): Promise<Status> {
    const resp = await this.fetchFn(this.base + "/status");
    const data = await resp.json();
    if (!resp.ok) {
      throw new ApiError(resp.status, String(data.error ?? resp.status));
    }
    return data as Status;
  }

  start(): Promise<Status> {
    return this.request<Status>("/start", {});
  }

  /** Finalize the session; returns the recorder's final report. */
  stop(): Promise<Record<string, unknown>> {
    return this.request<Record<string, unknown>>("/stop", {});
  }

  setSave(enabled: boolean): Promise<Status> {
    return this.request<Status>("/save", { enabled });
  }

  /** Timestamping happens server-side at receipt, so the press must be sent
   * immediately, never queued behind other requests. */
  stimulate(label: string, intensity?: number): Promise<StimulateResponse> {
    const body: Record<string, unknown> = { label };
    if (intensity !== undefined) {
      body.intensity = intensity;
    }
    return this.request<StimulateResponse>("/stimulate", body);
  }

  undo(): Promise<UndoResponse> {
    return this.request<UndoResponse>("/undo", {});
  }

  streamUrl(): string {
    return this.base + "/stream";
  }
}
