"""Emulated 8-channel, 24-bit ADC devices on a shared daisy chain.

One DeviceChain owns 1-4 devices that share the SPI lines, the clock and the
sampling rate. The chain is a single-threaded state machine driven entirely
by step_conversion (virtual time); an owning driver may move it between
threads but must never share it mutably.

Every conversion value is a pure function of (seed, channel, frame index),
so identical configurations replay identical frame streams, and any window
can be regenerated for verification.
"""

import numpy as np

from . import registers as regmap
from . import kernels
from .registers import RegisterFile

# Single-byte SPI commands; WREG/RREG carry the address and count-1 in a
# two-byte header.
CMD_WAKEUP = 0x02
CMD_STANDBY = 0x04
CMD_RESET = 0x06
CMD_START = 0x08
CMD_STOP = 0x0A
CMD_RDATAC = 0x10
CMD_SDATAC = 0x11
CMD_RDATA = 0x12
CMD_WREG = 0x40
CMD_RREG = 0x20

VREF = 4.5
NOMINAL_CLOCK_HZ = 2.048e6
TEST_FREQ_DIVIDER = 1 << 21  # test square frequency = f_clk / 2^21
TEST_AMP_DIVIDER = 2400.0  # test square amplitude = vref / 2400
BYTES_PER_DEVICE = 27  # 3 status bytes + 8 channels x 3 bytes
STATUS_FIXED = 0xC00000  # top nibble of every status word
STATUS_OVERRANGE = 0x000001  # GPIO0 repurposed: some channel clipped

# Input-short noise floor (input-referred RMS, microvolts) by sampling rate.
# Rates outside the table extrapolate with the sqrt-of-rate law the table
# itself follows.
NOISE_RMS_UV = {250: 0.14, 500: 0.20, 1000: 0.28, 2000: 0.40, 4000: 0.56}

# Devices leak a little common-mode into each channel; the default profile
# spreads the rejection ratio slightly across channels the way real parts
# do, everything comfortably above 80 dB.
DEFAULT_CM_REJECTION_DB = [100.0 - 0.25 * (ch % 8) for ch in range(32)]

_CACHE_FRAMES = 4096


class ChainError(Exception):
    pass


class UnknownOpcode(ChainError):
    pass


class RegisterAccessInContinuousMode(ChainError):
    pass


class ReadBeforeFirstConversion(ChainError):
    pass


class NotConverting(ChainError):
    pass


class InternalTestNotConfigured(ChainError):
    pass


class ChainFrame:
    """One conversion result for the whole chain, device 1 first.

    Either representation can be given at construction; the other is derived
    on demand. to_bytes and frame_from_bytes are exact inverses, so which
    one came first is unobservable."""

    __slots__ = ("_per_device", "frame_index", "t_conv_us", "_raw")

    def __init__(self, per_device, frame_index, t_conv_us, raw=None):
        self._per_device = per_device  # list of (status, [8 codes])
        self.frame_index = frame_index
        self.t_conv_us = t_conv_us
        self._raw = raw  # serialization prebuilt by the block cache

    @property
    def per_device(self):
        if self._per_device is None:
            self._per_device = frame_from_bytes(
                self._raw, len(self._raw) // BYTES_PER_DEVICE
            )
        return self._per_device

    def to_bytes(self):
        """Daisy-chain serialization: 27 bytes per device, first device's
        bytes first, codes in big-endian two's complement."""
        if self._raw is not None:
            return self._raw
        out = bytearray()
        for status, codes in self.per_device:
            out += (status & 0xFFFFFF).to_bytes(3, "big")
            for code in codes:
                out += (code & 0xFFFFFF).to_bytes(3, "big")
        return bytes(out)

    @property
    def channel_codes(self):
        flat = []
        for _, codes in self.per_device:
            flat.extend(codes)
        return flat

    @property
    def status_words(self):
        return [status for status, _ in self.per_device]


def frame_from_bytes(raw, n_devices):
    """Inverse of ChainFrame.to_bytes for tests and the engine."""
    if len(raw) != BYTES_PER_DEVICE * n_devices:
        raise ValueError("frame length %d != %d" % (len(raw), 27 * n_devices))
    per_device = []
    for d in range(n_devices):
        base = d * BYTES_PER_DEVICE
        status = int.from_bytes(raw[base : base + 3], "big")
        codes = []
        for c in range(8):
            u = int.from_bytes(raw[base + 3 + 3 * c : base + 6 + 3 * c], "big")
            codes.append(u - (1 << 24) if u & 0x800000 else u)
        per_device.append((status, codes))
    return per_device


def _block_bytes(codes, status):
    """Byte image of a whole conversion block, frame after frame, matching
    ChainFrame.to_bytes for every frame. codes is (channels, n), status is
    (devices, n); both int32."""
    nch, n = codes.shape
    ndev = status.shape[0]
    words = np.empty((n, ndev, 9), dtype=np.uint32)
    words[:, :, 0] = status.T & 0xFFFFFF
    words[:, :, 1:] = (codes.T & 0xFFFFFF).reshape(n, ndev, 8)
    # big-endian 32-bit lanes, top byte dropped: 24-bit two's complement
    raw = words.astype(">u4").view(np.uint8).reshape(n, ndev, 9, 4)[..., 1:]
    return np.ascontiguousarray(raw).tobytes()


class DeviceChain:
    def __init__(
        self,
        n_devices=1,
        clock_hz=NOMINAL_CLOCK_HZ,
        ppm=0.0,
        seed=0,
        vref=VREF,
        noise_rms_uv=None,
        cm_rejection_db=None,
        start_time_us=0,
    ):
        if not 1 <= n_devices <= 4:
            raise ValueError("1 to 4 devices per chain")
        self.n_devices = n_devices
        self.n_channels = 8 * n_devices
        self.clock_hz = float(clock_hz)
        self.ppm = float(ppm)
        self.seed = int(seed)
        self.vref = float(vref)
        # None keeps the per-rate table; a number overrides it (0 silences
        # the noise model entirely, which the bit-reproducible soak uses).
        self.noise_rms_uv = noise_rms_uv
        if cm_rejection_db is None:
            cm_rejection_db = DEFAULT_CM_REJECTION_DB
        self.cm_leak = np.array(
            [10.0 ** (-float(cm_rejection_db[ch % len(cm_rejection_db)]) / 20.0)
             for ch in range(self.n_channels)]
        )
        self.start_time_us = int(start_time_us)
        self.devices = [RegisterFile() for _ in range(n_devices)]
        self.sources = {}  # global channel index -> SignalSource
        self.cm_source = None  # common-mode drive, shared by all channels
        self.ref_source = None  # SRB1 reference, subtracted when routed
        self.mode = "RDATAC"
        self.converting = False
        self.standby = False
        self.frame_index = 0
        self._latched = None
        self._drdy_callbacks = []
        self._markers = []  # (first_frame, last_frame, channel, amplitude)
        self._cache_base = -1
        self._cache_codes = None
        self._cache_status = None
        self._cache_times = None
        self._cache_raw = None

    # -- state machine ----------------------------------------------------

    def power_on_reset(self):
        for dev in self.devices:
            dev.reset()
        self.mode = "RDATAC"
        self.converting = False
        self.standby = False
        self.frame_index = 0
        self._latched = None
        self._invalidate()

    def on_drdy(self, callback):
        """Register a conversion-complete callback: callback(frame, t_us)."""
        self._drdy_callbacks.append(callback)

    def execute_command(self, opcode):
        if opcode == CMD_RESET:
            self.power_on_reset()
        elif opcode == CMD_SDATAC:
            self.mode = "SDATAC"
        elif opcode == CMD_RDATAC:
            self.mode = "RDATAC"
        elif opcode == CMD_START:
            if not self.converting:
                self.converting = True
                self.frame_index = 0
                self._latched = None
        elif opcode == CMD_STOP:
            self.converting = False
        elif opcode == CMD_STANDBY:
            self.standby = True
            self.converting = False
        elif opcode == CMD_WAKEUP:
            self.standby = False
        elif opcode == CMD_RDATA:
            if self._latched is None:
                raise ReadBeforeFirstConversion(
                    "RDATA before the first conversion completed"
                )
            return self._latched
        else:
            raise UnknownOpcode(hex(opcode))
        return None

    def write_registers(self, addr, values):
        """WREG: the write is broadcast on the shared SPI lines, so every
        device in the chain takes it."""
        if self.mode == "RDATAC":
            raise RegisterAccessInContinuousMode("WREG requires SDATAC first")
        for offset, value in enumerate(values):
            for dev in self.devices:
                dev.write(addr + offset, value)
        self._invalidate()

    def read_registers(self, addr, count, device=0):
        if self.mode == "RDATAC":
            raise RegisterAccessInContinuousMode("RREG requires SDATAC first")
        dev = self.devices[device]
        return bytes(dev.read(addr + i) for i in range(count))

    def spi_exchange(self, tx):
        """Byte-level transaction against the chain: one chip-select frame.

        Returns the full-duplex response, same length as tx. In RDATAC mode
        an all-dummy transaction clocks out the latest frame.
        """
        tx = bytes(tx)
        if not tx:
            return b""
        rx = bytearray(len(tx))
        op = tx[0]
        if op == CMD_RDATA:
            frame = self.execute_command(CMD_RDATA)
            raw = frame.to_bytes()
            rx[1 : 1 + len(raw)] = raw[: len(tx) - 1]
        elif (op & 0xE0) == CMD_WREG:
            if len(tx) < 2:
                raise UnknownOpcode("truncated WREG header")
            count = tx[1] + 1
            if len(tx) < 2 + count:
                raise UnknownOpcode("truncated WREG payload")
            self.write_registers(op & 0x1F, tx[2 : 2 + count])
        elif (op & 0xE0) == CMD_RREG:
            if len(tx) < 2:
                raise UnknownOpcode("truncated RREG header")
            count = tx[1] + 1
            data = self.read_registers(op & 0x1F, count)
            rx[2 : 2 + count] = data
        elif op == 0x00:
            if self.mode != "RDATAC":
                raise UnknownOpcode("dummy read outside continuous mode")
            frame = self.execute_command(CMD_RDATA)
            raw = frame.to_bytes()
            if len(tx) == len(raw):
                return raw
            rx[: len(raw)] = raw[: len(tx)]
        else:
            self.execute_command(op)
        return bytes(rx)

    def corrupt_id(self, device=0, value=0x00):
        """Fault injection: make the ID check fail on one device."""
        self.devices[device]._regs[regmap.REG_ID] = value

    # -- conversion -------------------------------------------------------

    @property
    def sample_rate_hz(self):
        return self.devices[0].sample_rate_hz

    @property
    def period_us(self):
        return 1e6 / (self.sample_rate_hz * (1.0 + self.ppm * 1e-6))

    def drdy_time_us(self, frame_index):
        """Edge schedule: a multiplication per index, so there is no
        accumulated rounding drift over arbitrarily long runs."""
        return int(
            kernels.drdy_times_us(frame_index, 1, self.start_time_us, self.period_us)[0]
        )

    def schedule_marker(self, frame_index, channel=0, amplitude=100e-6, width=4):
        """Inject a rectangular voltage spike at a known frame, the ground
        truth for stimulus alignment tests."""
        self._markers.append((frame_index, frame_index + width, channel, amplitude))
        self._invalidate()

    def set_source(self, channel, source):
        self.sources[channel] = source
        self._invalidate()

    def set_common_mode(self, source):
        self.cm_source = source
        self._invalidate()

    def set_reference(self, source):
        self.ref_source = source
        self._invalidate()

    def noise_rms_volts(self):
        if self.noise_rms_uv is not None:
            return float(self.noise_rms_uv) * 1e-6
        rate = self.sample_rate_hz
        if rate in NOISE_RMS_UV:
            return NOISE_RMS_UV[rate] * 1e-6
        return NOISE_RMS_UV[4000] * (rate / 4000.0) ** 0.5 * 1e-6

    def test_signal(self):
        """The internal calibration square wave as a source definition."""
        from . import signals

        config2 = self.devices[0].read(regmap.REG_CONFIG2)
        if config2 not in (0xC0, 0xD0):
            raise InternalTestNotConfigured("CONFIG2=%#x" % config2)
        return signals.square(
            self.vref / TEST_AMP_DIVIDER, self.clock_hz / TEST_FREQ_DIVIDER
        )

    def conversion_block(self, k0, n):
        """Codes, status words and edge times for frames k0..k0+n-1.

        The per-frame SPI path reads through a cache filled from this, so
        stepping and block generation agree bit for bit.
        """
        volts = self._values_batch(k0, n)
        codes = np.empty((self.n_channels, n), dtype=np.int32)
        clipped = np.zeros((self.n_devices, n), dtype=bool)
        for ch in range(self.n_channels):
            dev = self.devices[ch // 8]
            if dev.channel_powered_down(ch % 8):
                codes[ch] = 0
                continue
            gain = dev.channel_gain(ch % 8)
            scale = gain * float(kernels.FS_CODES) / self.vref
            x = np.rint(volts[ch] * scale)
            over = (x > kernels.FS_CODES) | (x < -(1 << 23))
            if over.any():
                clipped[ch // 8] |= over
            codes[ch] = np.clip(x, -(1 << 23), kernels.FS_CODES).astype(np.int32)
        status = np.full((self.n_devices, n), STATUS_FIXED, dtype=np.int32)
        status[clipped] |= STATUS_OVERRANGE
        times = kernels.drdy_times_us(k0, n, self.start_time_us, self.period_us)
        return codes, status, times

    def step_conversion(self):
        """Produce the next frame and its DRDY time (virtual clock)."""
        if not self.converting:
            raise NotConverting("START not issued")
        k = self.frame_index
        if self._cache_base < 0 or not (
            self._cache_base <= k < self._cache_base + _CACHE_FRAMES
        ):
            self._cache_codes, self._cache_status, self._cache_times = (
                self.conversion_block(k, _CACHE_FRAMES)
            )
            self._cache_raw = _block_bytes(self._cache_codes, self._cache_status)
            self._cache_base = k
        i = k - self._cache_base
        flen = BYTES_PER_DEVICE * self.n_devices
        raw = self._cache_raw[i * flen : (i + 1) * flen]
        frame = ChainFrame(None, k, int(self._cache_times[i]), raw=raw)
        self.frame_index = k + 1
        self._latched = frame
        for callback in self._drdy_callbacks:
            callback(frame, frame.t_conv_us)
        return frame, frame.t_conv_us

    # -- internals ---------------------------------------------------------

    def _invalidate(self):
        self._cache_base = -1
        self._cache_raw = None

    def _values_batch(self, k0, n):
        """Input-referred voltage at every channel for n frames."""
        rate = self.sample_rate_hz
        rms = self.noise_rms_volts()
        cm = None
        if self.cm_source is not None:
            cm = self.cm_source.batch(k0, n, rate, self.seed, 65536)
        ref = None
        if self.ref_source is not None:
            ref = self.ref_source.batch(k0, n, rate, self.seed, 65535)
        test = None
        volts = np.zeros((self.n_channels, n), dtype=np.float64)
        for ch in range(self.n_channels):
            dev = self.devices[ch // 8]
            mux = dev.channel_mux(ch % 8)
            if mux == regmap.MUX_SHORT:
                v = np.zeros(n, dtype=np.float64)
            elif mux == regmap.MUX_TEST:
                if test is None:
                    test = kernels.square_batch(
                        k0,
                        n,
                        (self.clock_hz / TEST_FREQ_DIVIDER) / rate,
                        self.vref / TEST_AMP_DIVIDER,
                    )
                v = test.copy()
            else:
                # Normal electrode input; unsupported measurement MUX codes
                # read as a quiet input.
                source = self.sources.get(ch)
                if source is not None:
                    v = source.batch(k0, n, rate, self.seed, (ch + 1) * 65537)
                else:
                    v = np.zeros(n, dtype=np.float64)
                if ref is not None and dev.srb1:
                    v = v - ref
                if cm is not None:
                    v = v + self.cm_leak[ch] * cm
            if rms > 0.0:
                v = v + rms * kernels.gauss_counter(self.seed, ch, k0, n)
            for first, last, mch, amp in self._markers:
                if mch == ch and first < k0 + n and last > k0:
                    lo = max(first, k0) - k0
                    hi = min(last, k0 + n) - k0
                    v[lo:hi] += amp
            volts[ch] = v
        return volts


class SpiLink:
    """In-process stand-in for the five-wire hookup to the chain: chip
    select, serial clock, data in, data out and the DRDY edge callback. The
    acquisition engine talks only to this surface."""

    def __init__(self, chain):
        self._chain = chain
        self._selected = False
        self._dummy = bytes(BYTES_PER_DEVICE * chain.n_devices)

    def select(self):
        self._selected = True

    def deselect(self):
        self._selected = False

    def exchange(self, tx):
        if not self._selected:
            raise ChainError("chip select not asserted")
        return self._chain.spi_exchange(tx)

    def on_drdy(self, callback):
        self._chain.on_drdy(callback)

    # Convenience wrappers used by the engine; each is one select frame.

    def command(self, opcode):
        self.select()
        try:
            return self._chain.spi_exchange(bytes([opcode]))
        finally:
            self.deselect()

    def write_registers(self, addr, values):
        self.select()
        try:
            self._chain.spi_exchange(
                bytes([CMD_WREG | addr, len(values) - 1]) + bytes(values)
            )
        finally:
            self.deselect()

    def read_registers(self, addr, count):
        self.select()
        try:
            rx = self._chain.spi_exchange(
                bytes([CMD_RREG | addr, count - 1]) + bytes(count)
            )
            return rx[2 : 2 + count]
        finally:
            self.deselect()

    def read_frame(self):
        """Fetch the latched frame (RDATA outside RDATAC, dummy clocks in
        continuous mode)."""
        self.select()
        try:
            if self._chain.mode == "RDATAC":
                return self._chain.spi_exchange(self._dummy)
            rx = self._chain.spi_exchange(bytes([CMD_RDATA]) + self._dummy)
            return rx[1:]
        finally:
            self.deselect()
