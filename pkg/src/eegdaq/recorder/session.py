"""Session state machine, stimulus log and timestamp alignment.

A session moves forward only: idle -> receiving -> finalizing -> closed
(skipping ahead is allowed, going back never is). All transitions and the
stimulus log are serialized through one lock so the control API can be
called from any thread.
"""

import bisect
import threading
import time

_ORDER = {"idle": 0, "receiving": 1, "finalizing": 2, "closed": 3}


class InvalidState(Exception):
    pass


def utc_us():
    return time.time_ns() // 1000


class StimulusEvent:
    __slots__ = ("label", "t_utc_us", "intensity", "revoked")

    def __init__(self, label, t_utc_us, intensity=None):
        self.label = str(label)
        self.t_utc_us = int(t_utc_us)
        if intensity is not None:
            intensity = int(intensity)
            if not 0 <= intensity <= 10:
                raise ValueError("intensity must be 0..10")
        self.intensity = intensity
        self.revoked = False

    def to_dict(self):
        return {
            "label": self.label,
            "t_utc_us": self.t_utc_us,
            "intensity": self.intensity,
            "revoked": self.revoked,
        }


class AlignedAnnotation:
    """A stimulus event snapped to the first sample at or after it."""

    __slots__ = ("event", "sample_index", "offset_us", "aligned")

    def __init__(self, event, sample_index, offset_us, aligned):
        self.event = event
        self.sample_index = sample_index
        self.offset_us = offset_us
        self.aligned = aligned

    def to_dict(self):
        return {
            "event": self.event.to_dict(),
            "sample_index": self.sample_index,
            "offset_us": self.offset_us,
            "aligned": self.aligned,
        }


def align(events, sample_times):
    """Snap each non-revoked event to the first sample with timestamp at or
    after the event; offset_us = sample time - event time, always inside one
    sample period for in-span events. Events outside the recorded span are
    flagged unaligned."""
    out = []
    n = len(sample_times)
    for event in events:
        if event.revoked:
            continue
        if n == 0 or event.t_utc_us < sample_times[0] or event.t_utc_us > sample_times[n - 1]:
            out.append(AlignedAnnotation(event, None, None, False))
            continue
        idx = bisect.bisect_left(sample_times, event.t_utc_us)
        out.append(
            AlignedAnnotation(event, idx, int(sample_times[idx]) - event.t_utc_us, True)
        )
    return out


class Session:
    """Bookkeeping for one acquisition session on the recorder side."""

    def __init__(self, session_id, device_count, channels, rate_hz, gain,
                 save_enabled=True):
        self.id = session_id
        self.device_count = device_count
        self.channels = channels
        self.rate_hz = rate_hz
        self.gain = gain
        self._lock = threading.Lock()
        self.state = "idle"
        self.save_enabled = bool(save_enabled)
        self.save_windows = [] if not save_enabled else [[None, None]]
        self.packets = 0
        self.gaps = 0  # missing packets implied by seq jumps
        self.anomalies = 0  # duplicate or reordered seq (never from TCP)
        self.bytes_received = 0
        self.samples = 0
        self.highest_seq = None
        self.gap_log = []  # {"expected", "got", "missing", "t_wall_us"}
        self.t_first_us = None
        self.t_last_us = None
        self.events = []

    # -- state machine -----------------------------------------------------

    def _advance(self, new_state):
        with self._lock:
            if _ORDER[new_state] <= _ORDER[self.state]:
                raise InvalidState("%s -> %s" % (self.state, new_state))
            self.state = new_state

    def begin_receiving(self):
        self._advance("receiving")

    def begin_finalizing(self):
        self._advance("finalizing")

    def close(self):
        self._advance("closed")

    # -- stream accounting ---------------------------------------------------

    def note_packet(self, seq, n_samples, t_first_us, t_last_us):
        with self._lock:
            if self.highest_seq is None:
                expected = 0
            else:
                expected = self.highest_seq + 1
            if seq > expected:
                missing = seq - expected
                self.gaps += missing
                self.gap_log.append(
                    {
                        "expected": expected,
                        "got": seq,
                        "missing": missing,
                        "t_wall_us": utc_us(),
                    }
                )
            elif seq < expected:
                self.anomalies += 1
            if self.highest_seq is None or seq > self.highest_seq:
                self.highest_seq = seq
            self.packets += 1
            self.samples += n_samples
            if self.t_first_us is None and n_samples:
                self.t_first_us = t_first_us
            if n_samples:
                self.t_last_us = t_last_us

    def note_bytes(self, n):
        with self._lock:
            self.bytes_received += n

    # -- save toggle ----------------------------------------------------------

    def set_save(self, enabled):
        enabled = bool(enabled)
        with self._lock:
            if enabled == self.save_enabled:
                return self.save_enabled
            now = utc_us()
            if enabled:
                self.save_windows.append([now, None])
            else:
                if self.save_windows and self.save_windows[-1][1] is None:
                    self.save_windows[-1][1] = now
            self.save_enabled = enabled
            return enabled

    # -- stimulus log -----------------------------------------------------------

    def record_stimulus(self, label, intensity=None, t_utc_us=None):
        with self._lock:
            if self.state != "receiving":
                raise InvalidState("stimulate requires a receiving session")
            event = StimulusEvent(label, utc_us() if t_utc_us is None else t_utc_us,
                                  intensity)
            self.events.append(event)
            return event

    def undo_last(self):
        """Revoke the most recent non-revoked event; returns it or None."""
        with self._lock:
            for event in reversed(self.events):
                if not event.revoked:
                    event.revoked = True
                    return event
            return None

    def effective_events(self):
        with self._lock:
            return sorted(
                (e for e in self.events if not e.revoked), key=lambda e: e.t_utc_us
            )

    def status(self):
        with self._lock:
            return {
                "session_id": self.id,
                "state": self.state,
                "device_count": self.device_count,
                "channels": self.channels,
                "rate_hz": self.rate_hz,
                "gain": self.gain,
                "save_enabled": self.save_enabled,
                "packets": self.packets,
                "gaps": self.gaps,
                "anomalies": self.anomalies,
                "bytes_received": self.bytes_received,
                "samples": self.samples,
                "highest_seq": self.highest_seq,
                "t_first_us": self.t_first_us,
                "t_last_us": self.t_last_us,
                "events": len(self.events),
                "events_effective": sum(1 for e in self.events if not e.revoked),
            }
