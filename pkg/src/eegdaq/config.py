"""Acquisition run configuration.

Config files are flat UTF-8 text, one `key = value` per line, `#` starts a
comment. CLI flags apply the same keys on top of the file. Keys:

    device_count      1..4 chained devices (8 channels each)
    rate_hz           250 | 500 | 1000 | 2000 | 4000
    gain              1 | 2 | 4 | 6 | 8 | 12 | 24
    mux               normal | short | test  (input routing for all channels)
    ping_pong_capacity  samples per ping-pong half (default 40)
    fifo_capacity     bytes in the sample FIFO (default 4096)
    packet_samples    samples per wire packet (default 160, a multiple of
                      ping_pong_capacity)
    server            host:port of the recorder's stream listener
    control           host:port of the recorder's control API
    session_id        name stamped into every packet
    seed              emulator noise seed (integer)
    ppm               emulated clock offset, parts per million
    noise_rms_uv      input noise floor override in uV; "table" keeps the
                      per-rate device table; 0 silences it
    start_time_us     integer UTC microseconds for the first sample, or
                      "utc" to stamp from the wall clock at start
    duration_s        run length in seconds; 0 means run until stopped
    source.N          signal bound to channel N (1-based), e.g.
                      "sine:amp=50e-6,freq=10" or "noise:rms=2e-6"; unbound
                      channels read quiet
    common_mode       signal driven identically into every channel
    reference         signal on the reference electrode (subtracted when the
                      chain routes it)

Source specs are parsed by eegdaq.signals.parse_source; `+` sums parts.
"""

from . import registers as regmap
from .signals import SourceSpecError, parse_source

DEFAULT_SERVER = ("127.0.0.1", 7801)
DEFAULT_CONTROL = ("127.0.0.1", 7802)


class ConfigError(Exception):
    pass


def _parse_endpoint(text):
    host, sep, port = text.strip().rpartition(":")
    if not sep or not host:
        raise ConfigError("endpoint must be host:port, got %r" % text)
    try:
        port = int(port)
    except ValueError:
        raise ConfigError("bad port in %r" % text) from None
    if not 0 < port < 65536:
        raise ConfigError("port out of range in %r" % text)
    return (host, port)


def _parse_bool_rms(text):
    text = text.strip().lower()
    if text == "table":
        return None
    try:
        value = float(text)
    except ValueError:
        raise ConfigError("noise_rms_uv must be a number or 'table'") from None
    if value < 0:
        raise ConfigError("noise_rms_uv must be >= 0")
    return value


def _parse_start_time(text):
    text = text.strip().lower()
    if text == "utc":
        return None
    try:
        return int(text)
    except ValueError:
        raise ConfigError("start_time_us must be an integer or 'utc'") from None


_MUX_BY_NAME = {
    "normal": regmap.MUX_NORMAL,
    "short": regmap.MUX_SHORT,
    "test": regmap.MUX_TEST,
}


class AcqConfig:
    """Validated settings for one acquisition session."""

    def __init__(self):
        self.device_count = 1
        self.rate_hz = 4000
        self.gain = 24
        self.mux = regmap.MUX_NORMAL
        self.ping_pong_capacity = 40
        self.fifo_capacity = 4096
        self.packet_samples = 160
        self.server = DEFAULT_SERVER
        self.control = DEFAULT_CONTROL
        self.session_id = "session"
        self.seed = 0
        self.ppm = 0.0
        self.noise_rms_uv = None
        self.start_time_us = None
        self.duration_s = 0.0
        self.sources = {}  # 0-based channel -> SignalSource
        self.common_mode = None
        self.reference = None

    @property
    def channels(self):
        return 8 * self.device_count

    @property
    def record_bytes(self):
        """One FIFO record: timestamp + per-device status + per-channel volts."""
        return 8 + 4 * self.device_count + 8 * self.channels

    def set(self, key, text):
        """Apply one key=value pair; the single coercion path shared by the
        file parser and CLI overrides."""
        key = key.strip()
        text = text.strip()
        try:
            if key == "device_count":
                self.device_count = int(text)
            elif key == "rate_hz":
                self.rate_hz = int(text)
            elif key == "gain":
                self.gain = int(text)
            elif key == "mux":
                if text not in _MUX_BY_NAME:
                    raise ConfigError("mux must be normal, short or test")
                self.mux = _MUX_BY_NAME[text]
            elif key == "ping_pong_capacity":
                self.ping_pong_capacity = int(text)
            elif key == "fifo_capacity":
                self.fifo_capacity = int(text)
            elif key == "packet_samples":
                self.packet_samples = int(text)
            elif key == "server":
                self.server = _parse_endpoint(text)
            elif key == "control":
                self.control = _parse_endpoint(text)
            elif key == "session_id":
                if not text:
                    raise ConfigError("session_id must not be empty")
                self.session_id = text
            elif key == "seed":
                self.seed = int(text)
            elif key == "ppm":
                self.ppm = float(text)
            elif key == "noise_rms_uv":
                self.noise_rms_uv = _parse_bool_rms(text)
            elif key == "start_time_us":
                self.start_time_us = _parse_start_time(text)
            elif key == "duration_s":
                self.duration_s = float(text)
            elif key.startswith("source."):
                ch = int(key.partition(".")[2])
                if ch < 1:
                    raise ConfigError("channel numbers are 1-based")
                self.sources[ch - 1] = parse_source(text)
            elif key == "common_mode":
                self.common_mode = parse_source(text)
            elif key == "reference":
                self.reference = parse_source(text)
            else:
                raise ConfigError("unknown config key %r" % key)
        except ConfigError:
            raise
        except SourceSpecError as exc:
            raise ConfigError("%s = %s: %s" % (key, text, exc)) from None
        except ValueError:
            raise ConfigError("bad value for %s: %r" % (key, text)) from None

    def validate(self):
        if not 1 <= self.device_count <= 4:
            raise ConfigError("device_count must be 1..4")
        if self.rate_hz not in regmap.SUPPORTED_RATES:
            raise ConfigError(
                "rate_hz must be one of %s" % sorted(regmap.SUPPORTED_RATES)
            )
        if self.gain not in regmap.BITS_BY_GAIN:
            raise ConfigError("gain must be one of %s" % sorted(regmap.BITS_BY_GAIN))
        if self.ping_pong_capacity < 1:
            raise ConfigError("ping_pong_capacity must be positive")
        if self.packet_samples < 1 or self.packet_samples % self.ping_pong_capacity:
            raise ConfigError("packet_samples must be a multiple of ping_pong_capacity")
        if self.fifo_capacity < self.record_bytes:
            raise ConfigError(
                "fifo_capacity %d cannot hold one %d-byte record"
                % (self.fifo_capacity, self.record_bytes)
            )
        if self.duration_s < 0:
            raise ConfigError("duration_s must be >= 0")
        for ch in self.sources:
            if ch >= self.channels:
                raise ConfigError(
                    "source.%d beyond the %d configured channels"
                    % (ch + 1, self.channels)
                )
        return self

    @classmethod
    def from_text(cls, text):
        config = cls()
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError("line %d: expected key = value" % lineno)
            key = key.strip()
            if key in seen:
                raise ConfigError("line %d: duplicate key %r" % (lineno, key))
            seen.add(key)
            try:
                config.set(key, value)
            except ConfigError as exc:
                raise ConfigError("line %d: %s" % (lineno, exc)) from None
        return config.validate()

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())
