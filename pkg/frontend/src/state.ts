/** Console state and control gating.
 *
 * The rules live here as pure functions so they can be tested without a
 * DOM: every button's enabled state is a function of (connection, last
 * status), nothing else. */

import { Status } from "./types.js";

export interface ConsoleState {
  connected: boolean;
  session: Status | null;
  stimulusClass: string;
  intensity: number | null; // null sends no intensity
  uvPerDiv: number;
  secondsVisible: number;
  filterOn: boolean;
  detrendOn: boolean;
}

export const STIMULUS_CLASSES = ["target", "standard", "deviant", "rest"];

export const UV_PER_DIV_STEPS = [1, 2, 5, 10, 20, 50, 100, 200, 500];
export const SECONDS_STEPS = [0.5, 1, 2, 5, 10, 30];

export function initialState(): ConsoleState {
  return {
    connected: false,
    session: null,
    stimulusClass: STIMULUS_CLASSES[0],
    intensity: null,
    uvPerDiv: 50,
    secondsVisible: 2,
    filterOn: false,
    detrendOn: true,
  };
}

/** Stimulate only lands while samples are flowing; anywhere else the
 * recorder would reject it, so the button is disabled up front. */
export function canStimulate(s: ConsoleState): boolean {
  return s.connected && s.session?.state === "receiving";
}

/** Undo is enabled iff something is there to revoke. */
export function canUndo(s: ConsoleState): boolean {
  return s.connected && (s.session?.events_effective ?? 0) > 0;
}

export function canStart(s: ConsoleState): boolean {
  return s.connected && s.session?.state === "idle";
}

export function canStop(s: ConsoleState): boolean {
  const st = s.session?.state;
  return s.connected && (st === "receiving" || st === "idle");
}

export function canToggleSave(s: ConsoleState): boolean {
  const st = s.session?.state;
  return s.connected && (st === "idle" || st === "receiving");
}

/** Step a slider value through its scale; direction is +1 or -1. */
export function stepRange(steps: number[], current: number, direction: number): number {
  let idx = steps.findIndex((v) => v >= current);
  if (idx < 0) {
    idx = steps.length - 1;
  }
  idx = Math.min(steps.length - 1, Math.max(0, idx + direction));
  return steps[idx];
}
