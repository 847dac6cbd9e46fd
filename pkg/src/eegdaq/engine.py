"""Acquisition pipeline: configure, fetch, translate, buffer, transmit.

Two execution contexts, exactly as the process split demands: the fetch
context services every conversion edge, translates codes to volts and
formats fixed-size records into the byte-bounded FIFO; the packager context
drains the FIFO, serializes 160-sample JSON packets and writes them to the
transport. The FIFO is the only channel between them.

Two pacing modes share one code path. "paced" sleeps to each conversion
edge on the wall clock and counts overruns when a service ran past its
deadline; "fast" replays the same virtual edge schedule as quickly as the
machine allows. Given the same seed and start time the two modes emit
byte-identical packet streams.
"""

import socket
import struct
import threading
import time

import numpy as np

from . import kernels, wire
from . import registers as regmap
from .chain import (
    CMD_RDATAC,
    CMD_RESET,
    CMD_SDATAC,
    CMD_START,
    CMD_STOP,
    DeviceChain,
    SpiLink,
)
from .fifo import FifoClosed, SampleFifo


class EngineError(Exception):
    pass


class IdCheckFailed(EngineError):
    pass


class RegisterVerifyFailed(EngineError):
    pass


class TransportError(EngineError):
    pass


class TcpTransport:
    """Outbound stream connection to the recorder."""

    def __init__(self, endpoint, connect_timeout=5.0):
        self.endpoint = endpoint
        self.connect_timeout = connect_timeout
        self._sock = None

    def connect(self):
        try:
            self._sock = socket.create_connection(
                self.endpoint, timeout=self.connect_timeout
            )
            self._sock.settimeout(None)
            self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError as exc:
            raise TransportError(
                "cannot reach recorder at %s:%d (%s)"
                % (self.endpoint[0], self.endpoint[1], exc)
            ) from None

    def send(self, data):
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError("stream connection lost (%s)" % exc) from None

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None


class NullTransport:
    """Counts bytes and drops them; for benchmarks and dry runs."""

    def __init__(self):
        self.bytes_sent = 0

    def connect(self):
        pass

    def send(self, data):
        self.bytes_sent += len(data)

    def close(self):
        pass


def configure(link, config):
    """Bring the chain from power-on to converting.

    SDATAC, identity check, full register write, read-back verification,
    then START and RDATAC. One RESET retry on a verification mismatch.
    """
    link.command(CMD_SDATAC)
    profile = regmap.acquisition_profile(config.rate_hz, config.gain, config.mux)
    last_bad = None
    for attempt in (0, 1):
        ident = link.read_registers(regmap.REG_ID, 1)[0]
        if ident & 0x0F != 0x0E:
            raise IdCheckFailed("device ID %#04x fails the family check" % ident)
        for addr, value in profile.items():
            link.write_registers(addr, [value])
        bad = {}
        for addr, value in profile.items():
            got = link.read_registers(addr, 1)[0]
            if got != value:
                bad[addr] = (value, got)
        if not bad:
            link.command(CMD_START)
            link.command(CMD_RDATAC)
            return profile
        last_bad = bad
        if attempt == 0:
            link.command(CMD_RESET)
            link.command(CMD_SDATAC)
    raise RegisterVerifyFailed(
        "read-back mismatch after retry: %s"
        % {hex(a): "wrote %#04x read %#04x" % wv for a, wv in last_bad.items()}
    )


def _sleep_until(target):
    """Sleep to an absolute perf_counter instant; coarse sleep then yield."""
    while True:
        dt = target - time.perf_counter()
        if dt <= 0:
            return
        if dt > 0.0015:
            time.sleep(dt - 0.001)
        else:
            time.sleep(0)


class SessionReport:
    """Counters for one finished run, serializable for the CLI."""

    def __init__(self, **kw):
        self.session_id = kw.pop("session_id")
        self.mode = kw.pop("mode")
        self.rate_hz = kw.pop("rate_hz")
        self.device_count = kw.pop("device_count")
        self.channels = kw.pop("channels")
        self.gain = kw.pop("gain")
        self.frames = kw.pop("frames")
        self.packets = kw.pop("packets")
        self.residual_samples = kw.pop("residual_samples")
        self.overruns = kw.pop("overruns")
        self.digest = kw.pop("digest")
        self.t_first_us = kw.pop("t_first_us")
        self.t_last_us = kw.pop("t_last_us")
        self.bytes_sent = kw.pop("bytes_sent")
        self.wall_seconds = kw.pop("wall_seconds")
        self.adc_lag_max_s = kw.pop("adc_lag_max_s")
        self.trans_lag_max_s = kw.pop("trans_lag_max_s")
        self.fifo = kw.pop("fifo")
        if kw:
            raise TypeError("unexpected report fields: %s" % sorted(kw))

    def to_dict(self):
        return {
            "session_id": self.session_id,
            "mode": self.mode,
            "rate_hz": self.rate_hz,
            "device_count": self.device_count,
            "channels": self.channels,
            "gain": self.gain,
            "frames": self.frames,
            "packets": self.packets,
            "residual_samples": self.residual_samples,
            "overruns": self.overruns,
            "digest": self.digest,
            "t_first_us": self.t_first_us,
            "t_last_us": self.t_last_us,
            "bytes_sent": self.bytes_sent,
            "wall_seconds": self.wall_seconds,
            "adc_lag_max_s": self.adc_lag_max_s,
            "trans_lag_max_s": self.trans_lag_max_s,
            "fifo": self.fifo,
        }


class AcquisitionEngine:
    """One engine drives one session over one transport; not reusable."""

    def __init__(self, config, chain=None, transport=None, mode="paced"):
        if mode not in ("paced", "fast"):
            raise ValueError("mode must be 'paced' or 'fast'")
        self.config = config.validate()
        self.mode = mode
        if chain is None:
            start_us = config.start_time_us
            if start_us is None:
                start_us = time.time_ns() // 1000
            chain = DeviceChain(
                n_devices=config.device_count,
                ppm=config.ppm,
                seed=config.seed,
                noise_rms_uv=config.noise_rms_uv,
                start_time_us=start_us,
            )
            chain.power_on_reset()
            for ch, source in config.sources.items():
                chain.set_source(ch, source)
            if config.common_mode is not None:
                chain.set_common_mode(config.common_mode)
            if config.reference is not None:
                chain.set_reference(config.reference)
        self.chain = chain
        self.link = SpiLink(chain)
        self.transport = transport if transport is not None else TcpTransport(config.server)
        self.fifo = SampleFifo(config.fifo_capacity)
        self._rec = struct.Struct(
            "<q%dI%dd" % (config.device_count, config.channels)
        )
        # numpy image of the same record layout, for block formatting
        self._rec_dtype = np.dtype(
            [
                ("t", "<i8"),
                ("status", "<u4", (config.device_count,)),
                ("ch", "<f8", (config.channels,)),
            ]
        )
        self._stop = threading.Event()
        self._packager_error = None
        self.frames = 0
        self.overruns = 0
        self.packets = 0
        self.bytes_sent = 0
        self.residual_samples = 0
        self.t_first_us = None
        self.t_last_us = None
        # Worst wall-clock lag behind the conversion schedule, measured at
        # the frame fetch (adc) and at packet transmission (trans). Only a
        # paced run ties the schedule to the wall clock, so fast mode
        # reports None.
        self.adc_lag_max_s = None
        self.trans_lag_max_s = None
        self._pace_ref = None
        self._digest = wire.StreamDigest()

    def stop(self):
        self._stop.set()

    # -- packager context ---------------------------------------------------

    def _packager_loop(self):
        cfg = self.config
        ndev = cfg.device_count
        rec = self._rec
        rows = []
        seq = 0
        last_t_us = None
        try:
            while True:
                try:
                    records = self.fifo.pop_chunk(cfg.packet_samples - len(rows))
                except FifoClosed:
                    break
                for record in records:
                    fields = rec.unpack(record)
                    last_t_us = fields[0]
                    rows.append(
                        wire.sample_text(
                            fields[0], fields[1 : 1 + ndev], fields[1 + ndev :]
                        )
                    )
                if len(rows) >= cfg.packet_samples:
                    packet = wire.encode_packet_rows(cfg.session_id, seq, rows)
                    self.transport.send(packet)
                    ref = self._pace_ref
                    if ref is not None and last_t_us is not None:
                        lag = (time.perf_counter() - ref[0]) - (
                            last_t_us - ref[1]
                        ) / 1e6
                        if self.trans_lag_max_s is None or lag > self.trans_lag_max_s:
                            self.trans_lag_max_s = lag
                    for row in rows:
                        self._digest.update_row(row)
                    self.bytes_sent += len(packet)
                    self.packets += 1
                    seq += 1
                    rows = []
        except EngineError as exc:
            self._packager_error = exc
            self._stop.set()
            # keep draining so the producer can never deadlock on a full FIFO
            try:
                while True:
                    self.fifo.pop()
            except FifoClosed:
                pass

    # -- fetch context ------------------------------------------------------

    def _format_half(self, half):
        """Translate one ping-pong half (a list of (t_us, frame bytes)) into
        fixed-size FIFO records, all of it vectorized: parse the big-endian
        24-bit codes, scale to volts, and emit the packed record block in one
        buffer. Byte-identical to packing each record with self._rec."""
        cfg = self.config
        n = len(half)
        nch = cfg.channels
        ndev = cfg.device_count
        buf = np.frombuffer(b"".join(raw for _, raw in half), dtype=np.uint8)
        words = buf.reshape(n, ndev, 9, 3).astype(np.uint32)
        u = (words[..., 0] << 16) | (words[..., 1] << 8) | words[..., 2]
        status = u[:, :, 0]
        codes = u[:, :, 1:].reshape(n, nch).astype(np.int32)
        codes -= (codes & 0x800000) << 1  # sign-extend 24-bit
        volts = kernels.translate_batch(
            codes.reshape(-1), cfg.gain, self.chain.vref
        ).reshape(n, nch)
        arr = np.empty(n, dtype=self._rec_dtype)
        arr["t"] = [t_us for t_us, _ in half]
        arr["status"] = status
        arr["ch"] = volts
        blob = arr.tobytes()
        sz = self._rec.size
        self.fifo.push_many([blob[i * sz : (i + 1) * sz] for i in range(n)])

    def _fetch_loop(self):
        cfg = self.config
        chain = self.chain
        link = self.link
        paced = self.mode == "paced"
        half_cap = cfg.ping_pong_capacity
        n_target = None
        if cfg.duration_s > 0:
            n_target = round(cfg.duration_s * cfg.rate_hz)
        halves = ([], [])
        active = 0
        k = 0
        flen = 27 * cfg.device_count
        if paced:
            wall0 = time.perf_counter()
            t0_us = chain.drdy_time_us(0)
            self._pace_ref = (wall0, t0_us)
        while not self._stop.is_set() and (n_target is None or k < n_target):
            if paced:
                _sleep_until(wall0 + (chain.drdy_time_us(k) - t0_us) / 1e6)
            frame, t_us = chain.step_conversion()
            raw = link.read_frame()
            if len(raw) != flen:
                raise EngineError("frame length %d != %d" % (len(raw), flen))
            if self.t_first_us is None:
                self.t_first_us = t_us
            self.t_last_us = t_us
            half = halves[active]
            half.append((t_us, raw))
            k += 1
            if paced:
                now = time.perf_counter()
                lag = (now - wall0) - (t_us - t0_us) / 1e6
                if self.adc_lag_max_s is None or lag > self.adc_lag_max_s:
                    self.adc_lag_max_s = lag
                if now - wall0 > (chain.drdy_time_us(k) - t0_us) / 1e6:
                    # the next edge already passed before this service finished
                    self.overruns += 1
            if len(half) == half_cap:
                active ^= 1
                self._format_half(half)
                half.clear()
        self.frames = k
        leftover = halves[active]
        if leftover:
            self._format_half(leftover)
            leftover.clear()

    # -- lifecycle -----------------------------------------------------------

    def run(self):
        """Configure, stream until the duration or stop(), tear down, report."""
        wall_start = time.monotonic()
        self.transport.connect()
        try:
            configure(self.link, self.config)
        except EngineError:
            self.transport.close()
            raise
        packager = threading.Thread(
            target=self._packager_loop, name="eegdaq-packager", daemon=True
        )
        packager.start()
        try:
            self._fetch_loop()
        finally:
            self.fifo.close()
            packager.join(timeout=60.0)
            try:
                self.link.command(CMD_STOP)
            except Exception:
                pass
            self.transport.close()
        if self._packager_error is not None:
            raise self._packager_error
        self.residual_samples = self.frames - self.packets * self.config.packet_samples
        return SessionReport(
            session_id=self.config.session_id,
            mode=self.mode,
            rate_hz=self.config.rate_hz,
            device_count=self.config.device_count,
            channels=self.config.channels,
            gain=self.config.gain,
            frames=self.frames,
            packets=self.packets,
            residual_samples=self.residual_samples,
            overruns=self.overruns,
            digest=self._digest.hexdigest(),
            t_first_us=self.t_first_us,
            t_last_us=self.t_last_us,
            bytes_sent=self.bytes_sent,
            wall_seconds=time.monotonic() - wall_start,
            adc_lag_max_s=self.adc_lag_max_s,
            trans_lag_max_s=self.trans_lag_max_s,
            fifo=self.fifo.stats(),
        )
