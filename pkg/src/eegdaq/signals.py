"""Deterministic per-channel signal sources.

A source is a pure function of the frame index: batch(k0, n) depends only on
the source definition, the sampling rate, the seed and the stream id, so any
window of the stream can be regenerated independently and runs are
reproducible end to end. Phases are computed by multiplication per index,
never accumulated.
"""

import numpy as np

from . import kernels

KINDS = ("sine", "square", "alpha_burst", "white_noise", "dc", "composite")


class SourceSpecError(ValueError):
    pass


class SignalSource:
    """One channel input: sine, square, alpha_burst, white_noise, dc or a
    composite sum of those."""

    def __init__(
        self,
        kind,
        amplitude=0.0,
        frequency=0.0,
        rms=0.0,
        duty=0.5,
        phase=0.0,
        level=0.0,
        burst_hz=0.5,
        parts=None,
    ):
        if kind not in KINDS:
            raise SourceSpecError("unknown source kind: %r" % kind)
        if kind == "composite" and not parts:
            raise SourceSpecError("composite source needs parts")
        if kind in ("sine", "square", "alpha_burst") and frequency <= 0.0:
            raise SourceSpecError("%s source needs a frequency > 0" % kind)
        if kind == "white_noise" and rms < 0.0:
            raise SourceSpecError("noise rms must be >= 0")
        if not 0.0 < duty <= 1.0:
            raise SourceSpecError("duty must be in (0, 1]")
        self.kind = kind
        self.amplitude = float(amplitude)
        self.frequency = float(frequency)
        self.rms = float(rms)
        self.duty = float(duty)
        self.phase = float(phase)
        self.level = float(level)
        self.burst_hz = float(burst_hz)
        self.parts = list(parts) if parts else []

    def batch(self, k0, n, rate_hz, seed, stream):
        """Sample values for frame indices k0..k0+n-1 at the given rate.

        `stream` must be unique per (channel, composite part) so that noise
        draws never collide across channels; callers use the channel's
        stream and composite fans out below it.
        """
        if self.kind == "sine":
            return kernels.sine_batch(
                k0, n, self.frequency / rate_hz, self.amplitude, self.phase
            )
        if self.kind == "square":
            return kernels.square_batch(
                k0, n, self.frequency / rate_hz, self.amplitude, self.duty, self.phase
            )
        if self.kind == "dc":
            return np.full(n, self.level, dtype=np.float64)
        if self.kind == "white_noise":
            if self.rms == 0.0:
                return np.zeros(n, dtype=np.float64)
            return self.rms * kernels.gauss_counter(seed, stream, k0, n)
        if self.kind == "alpha_burst":
            # Carrier gated on/off so band power comes and goes like a
            # relaxed-subject alpha rhythm.
            carrier = kernels.sine_batch(
                k0, n, self.frequency / rate_hz, self.amplitude, self.phase
            )
            gate = kernels.square_batch(
                k0, n, self.burst_hz / rate_hz, 0.5, self.duty, 0.0
            )
            return carrier * (gate + 0.5)
        # composite
        out = np.zeros(n, dtype=np.float64)
        for i, part in enumerate(self.parts):
            out += part.batch(k0, n, rate_hz, seed, stream * 131 + i + 1)
        return out

    def describe(self):
        if self.kind == "sine":
            return "sine:amp=%g,freq=%g,phase=%g" % (
                self.amplitude,
                self.frequency,
                self.phase,
            )
        if self.kind == "square":
            return "square:amp=%g,freq=%g,duty=%g,phase=%g" % (
                self.amplitude,
                self.frequency,
                self.duty,
                self.phase,
            )
        if self.kind == "dc":
            return "dc:level=%g" % self.level
        if self.kind == "white_noise":
            return "noise:rms=%g" % self.rms
        if self.kind == "alpha_burst":
            return "alpha:amp=%g,freq=%g,burst=%g,duty=%g" % (
                self.amplitude,
                self.frequency,
                self.burst_hz,
                self.duty,
            )
        return "+".join(p.describe() for p in self.parts)


def sine(amplitude, frequency, phase=0.0):
    return SignalSource("sine", amplitude=amplitude, frequency=frequency, phase=phase)


def square(amplitude, frequency, duty=0.5, phase=0.0):
    return SignalSource(
        "square", amplitude=amplitude, frequency=frequency, duty=duty, phase=phase
    )


def dc(level):
    return SignalSource("dc", level=level)


def white_noise(rms):
    return SignalSource("white_noise", rms=rms)


def alpha_burst(amplitude, frequency=10.0, burst_hz=0.5, duty=0.5):
    return SignalSource(
        "alpha_burst",
        amplitude=amplitude,
        frequency=frequency,
        burst_hz=burst_hz,
        duty=duty,
    )


def composite(*parts):
    return SignalSource("composite", parts=parts)


_KIND_ALIASES = {
    "sine": "sine",
    "square": "square",
    "dc": "dc",
    "noise": "white_noise",
    "alpha": "alpha_burst",
}

_FIELDS = {
    "amp": "amplitude",
    "freq": "frequency",
    "rms": "rms",
    "duty": "duty",
    "phase": "phase",
    "level": "level",
    "burst": "burst_hz",
}


def parse_source(text):
    """Parse a source spec like "sine:amp=50e-6,freq=10" or a sum of specs
    joined with '+' into a SignalSource."""
    text = text.strip()
    if not text:
        raise SourceSpecError("empty source spec")
    parts = [t.strip() for t in text.split("+")]
    sources = []
    for part in parts:
        head, _, argtext = part.partition(":")
        kind = _KIND_ALIASES.get(head.strip())
        if kind is None:
            raise SourceSpecError("unknown source kind: %r" % head)
        kwargs = {}
        if argtext.strip():
            for item in argtext.split(","):
                key, eq, val = item.partition("=")
                key = key.strip()
                if not eq or key not in _FIELDS:
                    raise SourceSpecError("bad source argument: %r" % item)
                try:
                    kwargs[_FIELDS[key]] = float(val)
                except ValueError:
                    raise SourceSpecError("bad number in %r" % item) from None
        if kind == "alpha_burst" and "frequency" not in kwargs:
            kwargs["frequency"] = 10.0
        sources.append(SignalSource(kind, **kwargs))
    if len(sources) == 1:
        return sources[0]
    return composite(*sources)
