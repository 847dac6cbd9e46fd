"""Recording service: stream intake, fan-out, storage, and operator control.

One service hosts one session. The receive thread does bounded work per
packet: decode, account, hash, enqueue. Everything downstream runs on its
own thread behind its own queue, with per-queue overflow policy:

    storage   blocking, never drops; a sustained stall raises an alarm
    display   drop-oldest per subscriber, decimated to a point budget
    analysis  drop-oldest per analyzer, dropped samples are counted

so a slow consumer can never stall the receive path or the other consumers.

Control is a small HTTP/JSON API (documented in docs/control-api.md):

    GET  /status       session and queue counters
    GET  /stream       server-sent events: hello, then decimated batches
    POST /start        arm an idle session
    POST /save         {"enabled": bool} toggle storage
    POST /stimulate    {"label": str, "intensity": 0..10?} log an event
    POST /undo         revoke the most recent event
    POST /stop         finalize: drain, align, write the session file
"""

import json
import os
import queue
import socket
import threading
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .. import wire
from .session import InvalidState, Session, align, utc_us
from .storage import FILE_SUFFIX, SegmentStore, StorageFull, write_session_file

RECV_BYTES = 65536
VIZ_POINTS_PER_S = 2000
HOUR_US = 3_600_000_000


class _Subscriber:
    """Bounded drop-oldest mailbox for one display stream client."""

    def __init__(self, maxlen=256):
        self._q = deque()
        self._maxlen = maxlen
        self._cv = threading.Condition()
        self.dropped = 0

    def offer(self, item):
        with self._cv:
            if len(self._q) >= self._maxlen:
                self._q.popleft()
                self.dropped += 1
            self._q.append(item)
            self._cv.notify()

    def pop(self, timeout):
        with self._cv:
            if not self._q:
                self._cv.wait(timeout)
            if self._q:
                return self._q.popleft()
            return None


class AnalyzerHandle:
    """Worker thread feeding one analysis callback from its own queue."""

    def __init__(self, name, fn, maxlen, stopping):
        self.name = name
        self.fn = fn
        self.maxlen = maxlen
        self.delivered_samples = 0
        self.dropped_samples = 0
        self.errors = 0
        self._q = deque()
        self._cv = threading.Condition()
        self._stopping = stopping
        self.thread = threading.Thread(
            target=self._run, name="analyzer-" + name, daemon=True
        )

    def offer(self, samples):
        with self._cv:
            if len(self._q) >= self.maxlen:
                self.dropped_samples += len(self._q.popleft())
            self._q.append(samples)
            self._cv.notify()

    def _run(self):
        while True:
            with self._cv:
                if not self._q:
                    if self._stopping.is_set():
                        return
                    self._cv.wait(0.2)
                batch = self._q.popleft() if self._q else None
            if batch is None:
                continue
            try:
                self.fn(batch)
            except Exception:
                self.errors += 1
            else:
                self.delivered_samples += len(batch)

    def stats(self):
        return {
            "delivered_samples": self.delivered_samples,
            "dropped_samples": self.dropped_samples,
            "errors": self.errors,
        }


class RecorderService:
    """Receives one acquisition stream and serves the operator console."""

    def __init__(self, session_id, rate_hz, device_count, channels, gain,
                 directory, data_host="127.0.0.1", data_port=0,
                 control_host="127.0.0.1", control_port=0, save_enabled=True,
                 storage_queue_packets=256):
        self.session = Session(session_id, device_count, channels, rate_hz,
                               gain, save_enabled=save_enabled)
        self.directory = directory
        self.store = SegmentStore(directory, rate_hz, device_count, channels)
        self._digest = wire.StreamDigest()
        self._storage_q = queue.Queue(maxsize=storage_queue_packets)
        self.storage_alarms = 0
        self.storage_failed = False
        self.wire_error = None
        self.max_save_delay_us = 0
        self.max_plot_delay_us = 0
        self.save_delay_by_hour = {}
        self.press_to_log_us = []
        self._viz_stride = max(1, rate_hz // VIZ_POINTS_PER_S)
        self._viz_subs = []
        self._viz_lock = threading.Lock()
        self._sample_index = 0
        self._analyzers = []
        self._stopping = threading.Event()
        self._drain = threading.Event()
        self._engine_done = threading.Event()
        self._finalize_lock = threading.Lock()
        self._report = None
        self._conn = None
        self._t0_wall_us = utc_us()

        self._listener = socket.create_server((data_host, data_port))
        self._listener.settimeout(0.25)
        self.data_host, self.data_port = self._listener.getsockname()[:2]
        self._httpd = ThreadingHTTPServer(
            (control_host, control_port), _make_handler(self)
        )
        self._httpd.daemon_threads = True
        self.control_host, self.control_port = self._httpd.server_address[:2]

        self._data_thread = threading.Thread(
            target=self._serve_data, name="recorder-data", daemon=True
        )
        self._storage_thread = threading.Thread(
            target=self._serve_storage, name="recorder-storage", daemon=True
        )
        self._http_thread = threading.Thread(
            target=self._httpd.serve_forever, name="recorder-http", daemon=True
        )

    @classmethod
    def from_config(cls, config, directory, **kwargs):
        return cls(config.session_id, config.rate_hz, config.device_count,
                   config.channels, config.gain, directory, **kwargs)

    def start(self):
        self._data_thread.start()
        self._storage_thread.start()
        self._http_thread.start()
        return self

    # -- intake ----------------------------------------------------------------

    def _serve_data(self):
        conn = None
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            break
        if conn is None:
            return
        self._conn = conn
        conn.settimeout(0.25)
        state = wire.DecoderState()
        while not self._stopping.is_set():
            try:
                chunk = conn.recv(RECV_BYTES)
            except socket.timeout:
                continue
            except OSError:
                break
            if not chunk:
                break
            self.session.note_bytes(len(chunk))
            try:
                packets = state.feed(chunk)
            except wire.WireError as exc:
                self.wire_error = str(exc)
                break
            for packet in packets:
                self._ingest(packet)
        try:
            conn.close()
        except OSError:
            pass
        self._engine_done.set()

    def _ingest(self, packet):
        if self.session.state == "idle":
            self.session.begin_receiving()
        samples = packet.samples
        if samples:
            self.session.note_packet(packet.seq, len(samples),
                                     samples[0].t, samples[-1].t)
        else:
            self.session.note_packet(packet.seq, 0, None, None)
            return
        for s in samples:
            self._digest.update_sample(s)
        if self.session.save_enabled and not self.storage_failed:
            rows = [(s.t, s.status, s.ch) for s in samples]
            self._enqueue_storage(rows)
        self._publish_viz(samples)
        for handle in self._analyzers:
            handle.offer(samples)

    def _enqueue_storage(self, rows):
        item = (rows, utc_us())
        while not self._stopping.is_set():
            try:
                self._storage_q.put(item, timeout=1.0)
                return
            except queue.Full:
                # Storage is stalled. Keep waiting (integrity wins over
                # latency) but make the stall visible.
                self.storage_alarms += 1

    # -- storage drain -----------------------------------------------------------

    def _serve_storage(self):
        while True:
            try:
                rows, enq_wall_us = self._storage_q.get(timeout=0.2)
            except queue.Empty:
                if self._drain.is_set():
                    return
                continue
            if self.storage_failed:
                continue
            try:
                self.store.append_samples(rows)
            except StorageFull:
                self.storage_failed = True
                self.session.set_save(False)
                self.storage_alarms += 1
                continue
            delay = utc_us() - enq_wall_us
            if delay > self.max_save_delay_us:
                self.max_save_delay_us = delay
            hour = (enq_wall_us - self._t0_wall_us) // HOUR_US
            if delay > self.save_delay_by_hour.get(hour, 0):
                self.save_delay_by_hour[hour] = delay

    # -- display fan-out ---------------------------------------------------------

    def _publish_viz(self, samples):
        stride = self._viz_stride
        base = self._sample_index
        self._sample_index += len(samples)
        pts_t = []
        pts_ch = []
        for i, s in enumerate(samples):
            if (base + i) % stride == 0:
                pts_t.append(s.t)
                pts_ch.append(s.ch)
        if not pts_t:
            return
        with self._viz_lock:
            if not self._viz_subs:
                return
            blob = json.dumps(
                {"t": pts_t, "ch": pts_ch}, separators=(",", ":")
            ).encode("utf-8")
            item = (blob, utc_us())
            for sub in self._viz_subs:
                sub.offer(item)

    def _note_plot_delay(self, delay_us):
        with self._viz_lock:
            if delay_us > self.max_plot_delay_us:
                self.max_plot_delay_us = delay_us

    def subscribe(self, maxlen=256):
        sub = _Subscriber(maxlen)
        with self._viz_lock:
            self._viz_subs.append(sub)
        return sub

    def unsubscribe(self, sub):
        with self._viz_lock:
            if sub in self._viz_subs:
                self._viz_subs.remove(sub)

    def hello(self):
        return {
            "session_id": self.session.id,
            "rate_hz": self.session.rate_hz,
            "device_count": self.session.device_count,
            "channels": self.session.channels,
            "gain": self.session.gain,
            "stride": self._viz_stride,
            "points_per_second": self.session.rate_hz // self._viz_stride,
        }

    # -- analysis fan-out ----------------------------------------------------------

    def register_analyzer(self, fn, name=None, maxlen=64):
        handle = AnalyzerHandle(name or fn.__name__, fn, maxlen, self._stopping)
        self._analyzers.append(handle)
        handle.thread.start()
        return handle

    # -- operator commands ---------------------------------------------------------

    def start_session(self):
        self.session.begin_receiving()

    def set_save(self, enabled):
        if enabled and self.storage_failed:
            raise InvalidState("storage failed earlier; saving cannot resume")
        return self.session.set_save(enabled)

    def record_stimulus(self, label, intensity=None, t_press_us=None):
        t_press = utc_us() if t_press_us is None else t_press_us
        event = self.session.record_stimulus(label, intensity, t_utc_us=t_press)
        latency = utc_us() - t_press
        self.press_to_log_us.append(latency)
        return event, latency

    def undo_last(self):
        return self.session.undo_last()

    def status(self):
        body = self.session.status()
        body["queues"] = {
            "storage_depth": self._storage_q.qsize(),
            "storage_alarms": self.storage_alarms,
            "viz_subscribers": len(self._viz_subs),
            "viz_dropped": sum(s.dropped for s in self._viz_subs),
            "max_plot_delay_us": self.max_plot_delay_us,
            "analyzers": {h.name: h.stats() for h in self._analyzers},
        }
        body["storage"] = {
            "segments": len(self.store.index),
            "samples_written": self.store.samples_written,
            "bytes_written": self.store.bytes_written,
            "failed": self.storage_failed,
            "max_save_delay_us": self.max_save_delay_us,
        }
        body["data_port"] = self.data_port
        body["control_port"] = self.control_port
        body["engine_done"] = self._engine_done.is_set()
        body["wire_error"] = self.wire_error
        if self.press_to_log_us:
            body["press_to_log_us_max"] = max(self.press_to_log_us)
        return body

    # -- finalize ------------------------------------------------------------------

    def finalize(self):
        """Drain everything, align events, write the session file."""
        with self._finalize_lock:
            if self._report is not None:
                return self._report
            self.session.begin_finalizing()
            self._stopping.set()
            self._listener.close()
            if self._conn is not None:
                try:
                    self._conn.close()
                except OSError:
                    pass
            self._data_thread.join(timeout=30.0)
            self._drain.set()
            self._storage_thread.join(timeout=120.0)
            for handle in self._analyzers:
                handle.thread.join(timeout=10.0)
            try:
                self.store.flush_partial()
            except StorageFull:
                self.storage_failed = True
            annotations = align(self.session.effective_events(),
                                self.store.sample_times())
            problems = self.store.verify()
            path = os.path.join(self.directory, self.session.id + FILE_SUFFIX)
            write_session_file(path, self._header(annotations, problems),
                               self.store)
            self.store.close()
            self.session.close()
            self._report = {
                "path": path,
                "session_id": self.session.id,
                "samples_received": self.session.samples,
                "samples_stored": self.store.samples_written,
                "packets": self.session.packets,
                "gaps": self.session.gaps,
                "anomalies": self.session.anomalies,
                "stream_digest": self._digest.hexdigest(),
                "annotations": [a.to_dict() for a in annotations],
                "storage_alarms": self.storage_alarms,
                "storage_problems": problems,
                "max_save_delay_us": self.max_save_delay_us,
                "max_plot_delay_us": self.max_plot_delay_us,
                "press_to_log_us": list(self.press_to_log_us),
            }
            return self._report

    def _header(self, annotations, problems):
        s = self.session
        return {
            "format": {"container": "eeg-session", "version": 1},
            "config": {
                "session_id": s.id,
                "rate_hz": s.rate_hz,
                "device_count": s.device_count,
                "channels": s.channels,
                "gain": s.gain,
            },
            "counters": {
                "packets": s.packets,
                "samples_received": s.samples,
                "samples_stored": self.store.record_count,
                "gaps": s.gaps,
                "anomalies": s.anomalies,
                "bytes_received": s.bytes_received,
                "highest_seq": s.highest_seq,
            },
            "t_first_us": s.t_first_us,
            "t_last_us": s.t_last_us,
            "events": [e.to_dict() for e in s.events],
            "annotations": [a.to_dict() for a in annotations],
            "holes": s.gap_log,
            "save_windows": s.save_windows,
            "segments": {
                "count": len(self.store.index),
                "samples_per_segment": self.store.seg_n,
            },
            "storage_problems": problems,
            "stream_digest": self._digest.hexdigest(),
        }

    def close(self):
        if self._report is None:
            try:
                self.finalize()
            except InvalidState:
                pass
        self._httpd.shutdown()
        self._http_thread.join(timeout=10.0)
        self._httpd.server_close()


def _make_handler(service):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _json(self, code, obj):
            blob = json.dumps(obj).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(blob)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(blob)

        def do_GET(self):
            if self.path == "/status":
                self._json(200, service.status())
            elif self.path == "/stream":
                self._stream()
            else:
                self._json(404, {"error": "unknown path %r" % self.path})

        def do_POST(self):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            try:
                body = json.loads(raw.decode("utf-8")) if raw else {}
            except (ValueError, UnicodeDecodeError):
                self._json(400, {"error": "body must be JSON"})
                return
            if not isinstance(body, dict):
                self._json(400, {"error": "body must be a JSON object"})
                return
            try:
                self._dispatch_post(body)
            except InvalidState as exc:
                self._json(409, {"error": str(exc)})
            except ValueError as exc:
                self._json(400, {"error": str(exc)})

        def _dispatch_post(self, body):
            if self.path == "/start":
                service.start_session()
                self._json(200, service.status())
            elif self.path == "/save":
                enabled = body.get("enabled")
                if not isinstance(enabled, bool):
                    raise ValueError('"enabled" must be true or false')
                service.set_save(enabled)
                self._json(200, service.status())
            elif self.path == "/stimulate":
                t_press = utc_us()
                label = body.get("label")
                if not isinstance(label, str) or not label:
                    raise ValueError('"label" must be a non-empty string')
                intensity = body.get("intensity")
                event, latency = service.record_stimulus(
                    label, intensity, t_press_us=t_press
                )
                self._json(200, {"event": event.to_dict(),
                                 "press_to_log_us": latency})
            elif self.path == "/undo":
                event = service.undo_last()
                self._json(200, {"revoked": event.to_dict() if event else None})
            elif self.path == "/stop":
                self._json(200, service.finalize())
            else:
                self._json(404, {"error": "unknown path %r" % self.path})

        def _stream(self):
            sub = service.subscribe()
            try:
                self.send_response(200)
                self.send_header("Content-Type", "text/event-stream")
                self.send_header("Cache-Control", "no-cache")
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Connection", "close")
                self.end_headers()
                hello = json.dumps(service.hello(), separators=(",", ":"))
                self.wfile.write(b"event: hello\ndata: " + hello.encode("utf-8")
                                 + b"\n\n")
                self.wfile.flush()
                while not service._stopping.is_set():
                    item = sub.pop(timeout=1.0)
                    if item is None:
                        self.wfile.write(b": keep-alive\n\n")
                        self.wfile.flush()
                        continue
                    blob, enq_wall_us = item
                    self.wfile.write(b"event: batch\ndata: " + blob + b"\n\n")
                    self.wfile.flush()
                    service._note_plot_delay(utc_us() - enq_wall_us)
            except OSError:
                pass
            finally:
                service.unsubscribe(sub)

    return Handler
