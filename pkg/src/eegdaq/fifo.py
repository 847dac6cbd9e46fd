"""Byte-bounded blocking FIFO between the fetch and packaging contexts.

Single producer, single consumer. Capacity is counted in bytes of queued
records, so the default 4096 holds a known number of fixed-size sample
records. Push blocks while the queue is full: that back-pressures the
formatter, never the conversion fetch (which hands off through the
ping-pong buffer upstream). Pop blocks while empty. A stall that lasts
longer than one second is recorded as an overflow alarm, the health signal
for a consumer that stopped keeping up.
"""

import collections
import threading
import time

ALARM_STALL_SECONDS = 1.0


class FifoClosed(Exception):
    """Push after close, or pop after the queue drained post-close."""


class SampleFifo:
    def __init__(self, capacity_bytes=4096):
        if capacity_bytes < 1:
            raise ValueError("capacity must be positive")
        self.capacity_bytes = capacity_bytes
        self._cond = threading.Condition()
        self._queue = collections.deque()
        self._used = 0
        self._closed = False
        self.pushes = 0
        self.pops = 0
        self.bytes_pushed = 0
        self.stall_events = 0
        self.stall_seconds = 0.0
        self.overflow_alarms = 0

    @property
    def used_bytes(self):
        with self._cond:
            return self._used

    def __len__(self):
        with self._cond:
            return len(self._queue)

    def push(self, record):
        """Queue one record, blocking until it fits."""
        self.push_many((record,))

    def push_many(self, records):
        """Queue records in order under one lock round trip, blocking as
        each one needs; the per-record accounting matches push exactly."""
        with self._cond:
            for record in records:
                size = len(record)
                if size > self.capacity_bytes:
                    raise ValueError(
                        "%d-byte record exceeds %d-byte capacity"
                        % (size, self.capacity_bytes)
                    )
                if self._used + size > self.capacity_bytes and not self._closed:
                    # The consumer may be asleep from when the queue was
                    # empty. Records appended earlier in this batch must wake
                    # it before we block on it for room, or both sides sleep
                    # until a timeout expires (a batch larger than the whole
                    # queue hits this every time).
                    self._cond.notify_all()
                    t0 = time.monotonic()
                    while self._used + size > self.capacity_bytes and not self._closed:
                        self._cond.wait(0.05)
                    stalled = time.monotonic() - t0
                    self.stall_events += 1
                    self.stall_seconds += stalled
                    if stalled > ALARM_STALL_SECONDS:
                        self.overflow_alarms += 1
                if self._closed:
                    raise FifoClosed("push after close")
                self._queue.append(record)
                self._used += size
                self.pushes += 1
                self.bytes_pushed += size
            self._cond.notify_all()

    def pop(self, timeout=None):
        """Dequeue the oldest record, blocking until one is available.
        Raises FifoClosed once the producer closed and everything drained."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self._queue:
                if self._closed:
                    raise FifoClosed("queue drained")
                if deadline is not None:
                    left = deadline - time.monotonic()
                    if left <= 0:
                        raise TimeoutError("pop timed out")
                    self._cond.wait(left)
                else:
                    self._cond.wait(0.05)
            record = self._queue.popleft()
            self._used -= len(record)
            self.pops += 1
            self._cond.notify_all()
            return record

    def pop_chunk(self, max_records):
        """Dequeue up to max_records in one lock acquisition (at least one,
        blocking like pop). Cheap bulk drain for the packager."""
        out = [self.pop()]
        with self._cond:
            while self._queue and len(out) < max_records:
                record = self._queue.popleft()
                self._used -= len(record)
                self.pops += 1
                out.append(record)
            if out:
                self._cond.notify_all()
        return out

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self):
        with self._cond:
            return self._closed

    def stats(self):
        with self._cond:
            return {
                "pushes": self.pushes,
                "pops": self.pops,
                "bytes_pushed": self.bytes_pushed,
                "queued_records": len(self._queue),
                "queued_bytes": self._used,
                "stall_events": self.stall_events,
                "stall_seconds": self.stall_seconds,
                "overflow_alarms": self.overflow_alarms,
            }
