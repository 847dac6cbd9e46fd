"""Signal-quality figures: noise floor, ENOB, CMRR, band power, filters.

Resolution is reported two ways from one measurement: effective bits from
the shorted-input noise floor, and dynamic range in dB, tied by the exact
identity dB = bits * 20*log10(2). CMRR is measured the way a bench check
would do it: drive a pure common-mode tone, read back the differential
residual, and compare amplitudes in a single DFT bin so an in-band
differential stimulus cannot contaminate the number.

Spectral estimates go through Welch averaging (2 s Hann segments, half
overlap); band power integrates the density over the band so the value is
in volts squared and independent of the bin width.
"""

import math

import numpy as np
import scipy.signal

from . import kernels, registers, signals
from .chain import CMD_SDATAC, VREF, DeviceChain

DB_PER_BIT = 20.0 * math.log10(2.0)

BANDS = {
    "delta": (1.0, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 13.0),
    "beta": (13.0, 30.0),
    "gamma": (30.0, 50.0),
}

CMRR_SWEEP_HZ = (1, 2, 5, 10, 20, 30, 40, 50, 60, 70)

# Passive input anti-alias RC on each electrode lead.
FRONT_END_R_OHM = 4700.0
FRONT_END_C_FARAD = 4.7e-9


# -- resolution ---------------------------------------------------------------


def noise_stats(volts):
    """Mean, RMS about the mean, and peak deviation of one channel."""
    x = np.asarray(volts, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no samples")
    mean = float(np.mean(x))
    centered = x - mean
    return {
        "n": int(x.size),
        "mean": mean,
        "rms": float(np.sqrt(np.mean(centered * centered))),
        "peak": float(np.max(np.abs(centered))),
    }


def enob(noise_rms_volts, gain=24.0, vref=VREF):
    """Effective bits from an input-referred noise floor.

    The usable span at the input is vref/gain either side of zero; dividing
    by sqrt(2) converts the full-scale sine to its RMS before taking the
    log, which is the standard SNR-based definition.
    """
    if noise_rms_volts <= 0.0:
        raise ValueError("noise rms must be > 0")
    return math.log2(vref / (math.sqrt(2.0) * gain * noise_rms_volts))


def dynamic_range_db(noise_rms_volts, gain=24.0, vref=VREF):
    """Same measurement in dB; exactly enob * 20*log10(2)."""
    return enob(noise_rms_volts, gain, vref) * DB_PER_BIT


def _bench_chain(rate_hz, gain, mux, **chain_kw):
    """A powered-up chain holding the given acquisition profile."""
    chain = DeviceChain(1, **chain_kw)
    chain.power_on_reset()
    chain.execute_command(CMD_SDATAC)
    for addr, value in registers.acquisition_profile(rate_hz, gain, mux).items():
        chain.write_registers(addr, [value])
    return chain


def measure_noise(rate_hz, n_samples=1_000_000, gain=24, seed=0, channel=0,
                  noise_rms_uv=None):
    """Shorted-input noise floor of one channel, in volts at the input.

    noise_rms_uv overrides the emulator's rate-dependent noise density;
    0.0 gives the noiseless degenerate case (rms 0, resolution unbounded).
    """
    chain = _bench_chain(rate_hz, gain, registers.MUX_SHORT, seed=seed,
                         noise_rms_uv=noise_rms_uv)
    codes, _, _ = chain.conversion_block(0, n_samples)
    return kernels.translate_batch(
        np.ascontiguousarray(codes[channel]), float(gain), chain.vref
    )


# -- common-mode rejection -------------------------------------------------------


def single_bin_amplitude(x, rate_hz, freq_hz):
    """Amplitude of the component at freq_hz over a whole number of cycles.

    Rectangular window, so any other whole-cycle tone in the record is
    exactly orthogonal and contributes nothing.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    cycles = freq_hz * n / rate_hz
    k = int(round(cycles))
    if abs(cycles - k) > 1e-9:
        raise ValueError(
            "%g Hz is not a whole number of cycles in %d samples" % (freq_hz, n)
        )
    phase = np.exp(-2j * np.pi * k * np.arange(n) / n)
    return 2.0 * abs(np.dot(x, phase)) / n


def measure_cmrr(rejection_db=None, rate_hz=4000, freqs=CMRR_SWEEP_HZ,
                 cm_amplitude=4.4, cm_dc=2.5, diff_amplitude=100e-6,
                 gain=24, seed=0):
    """Measured CMRR per frequency and channel, in dB.

    Drives the common-mode input with a tone plus a DC bias while every
    channel also carries a differential stimulus, then reads the residual
    at the tone frequency. One second per point keeps every integer
    frequency on an exact bin.
    """
    per_freq = {}
    for f in freqs:
        rej = None if rejection_db is None else [float(rejection_db)]
        chain = _bench_chain(rate_hz, gain, registers.MUX_NORMAL,
                             seed=seed, cm_rejection_db=rej)
        diff_hz = 10.0 if f != 10 else 11.0
        for ch in range(chain.n_channels):
            chain.set_source(ch, signals.sine(diff_amplitude, diff_hz))
        chain.set_common_mode(
            signals.composite(signals.sine(cm_amplitude, f), signals.dc(cm_dc))
        )
        codes, status, _ = chain.conversion_block(0, rate_hz)
        if int(np.max(status)) & 0x1:
            raise ValueError("front end overranged during CMRR measurement")
        row = []
        for ch in range(chain.n_channels):
            volts = kernels.translate_batch(
                np.ascontiguousarray(codes[ch]), float(gain), chain.vref
            )
            residual = single_bin_amplitude(volts, rate_hz, f)
            row.append(20.0 * math.log10(cm_amplitude / residual))
        per_freq[f] = row
    flat = [v for row in per_freq.values() for v in row]
    return {"per_freq": per_freq, "min_db": min(flat), "max_db": max(flat)}


# -- spectra ------------------------------------------------------------------------


def psd(x, rate_hz, seg_seconds=2.0):
    """Welch power spectral density: Hann segments, 50 percent overlap."""
    x = np.asarray(x, dtype=np.float64)
    nper = min(int(round(seg_seconds * rate_hz)), x.size)
    if nper < 2:
        raise ValueError("record too short for a spectrum")
    return scipy.signal.welch(
        x,
        fs=rate_hz,
        window="hann",
        nperseg=nper,
        noverlap=nper // 2,
        detrend="constant",
    )


def band_power(x, rate_hz, lo_hz, hi_hz, seg_seconds=2.0):
    """Power in [lo_hz, hi_hz), as volts squared (density times width)."""
    f, pxx = psd(x, rate_hz, seg_seconds)
    mask = (f >= lo_hz) & (f < hi_hz)
    return float(np.sum(pxx[mask]) * (f[1] - f[0]))


def band_powers(x, rate_hz, seg_seconds=2.0):
    """Power in each named band from a single spectral estimate."""
    f, pxx = psd(x, rate_hz, seg_seconds)
    df = f[1] - f[0]
    out = {}
    for name, (lo, hi) in BANDS.items():
        mask = (f >= lo) & (f < hi)
        out[name] = float(np.sum(pxx[mask]) * df)
    return out


def band_fraction(x, rate_hz, name, seg_seconds=2.0):
    """One band's share of the total power across all named bands."""
    powers = band_powers(x, rate_hz, seg_seconds)
    total = sum(powers.values())
    if total <= 0.0:
        raise ValueError("record has no in-band power")
    return powers[name] / total


def dominant_frequency(x, rate_hz, lo_hz=1.0, hi_hz=50.0, seg_seconds=2.0):
    """Frequency of the strongest PSD bin inside [lo_hz, hi_hz)."""
    f, pxx = psd(x, rate_hz, seg_seconds)
    mask = (f >= lo_hz) & (f < hi_hz)
    if not mask.any():
        raise ValueError("band is empty at this resolution")
    return float(f[mask][np.argmax(pxx[mask])])


# -- display conditioning ---------------------------------------------------------------


def detrend_linear(x):
    """Remove the best-fit line (drift from electrode polarization)."""
    return scipy.signal.detrend(np.asarray(x, dtype=np.float64), type="linear")


def notch_filter(x, rate_hz, f0_hz=50.0, q=25.0):
    """Zero-phase mains notch; forward-backward so peaks do not shift."""
    b, a = scipy.signal.iirnotch(f0_hz, q, fs=rate_hz)
    return scipy.signal.filtfilt(b, a, np.asarray(x, dtype=np.float64))


def display_filter(x, rate_hz, notch_hz=50.0, q=25.0):
    """Drift removal plus mains notch, for plotting only.

    Stored and streamed data stay raw; this runs on the way to the screen.
    """
    return notch_filter(detrend_linear(x), rate_hz, notch_hz, q)


# -- run delay and loss summary ---------------------------------------------------------


def delay_loss_report(engine_report, session, recorder_status=None):
    """Four delay dimensions and two loss counters for one finished run.

    adc and trans come from the engine's wall-clock lag behind the
    conversion schedule (None for fast-mode runs, which have no wall
    schedule); save and plot come from the recorder's queue accounting when
    its status or final report is supplied. mp loss counts conversion edges
    the fetch context serviced late; sw loss counts packets the recorder
    never saw.
    """

    def pick(source, *keys):
        if source is None:
            return None
        for key in keys:
            if isinstance(source, dict):
                if key in source:
                    return source[key]
                for nested in source.values():
                    if isinstance(nested, dict) and key in nested:
                        return nested[key]
        return None

    gaps = session.get("gaps") if isinstance(session, dict) else session.gaps
    save_us = pick(recorder_status, "max_save_delay_us")
    plot_us = pick(recorder_status, "max_plot_delay_us")
    duration_s = None
    if engine_report.t_first_us is not None and engine_report.t_last_us is not None:
        duration_s = (
            engine_report.t_last_us - engine_report.t_first_us
        ) / 1e6 + 1.0 / engine_report.rate_hz
    delays = {
        "adc": engine_report.adc_lag_max_s,
        "trans": engine_report.trans_lag_max_s,
        "save": None if save_us is None else save_us / 1e6,
        "plot": None if plot_us is None else plot_us / 1e6,
    }
    known = [v for v in delays.values() if v is not None]
    report = {
        "session_id": engine_report.session_id,
        "mode": engine_report.mode,
        "rate_hz": engine_report.rate_hz,
        "channels": engine_report.channels,
        "duration_s": duration_s,
        "frames": engine_report.frames,
        "packets": engine_report.packets,
        "mp_loss": engine_report.overruns,
        "sw_loss": gaps,
        "delays_s": delays,
        "max_delay_s": max(known) if known else None,
    }
    if duration_s and known:
        report["max_delay_per_hour_s"] = max(known) / (duration_s / 3600.0)
    return report


# -- front-end sanity -----------------------------------------------------------------------


def rc_cutoff_hz(r_ohm=FRONT_END_R_OHM, c_farad=FRONT_END_C_FARAD):
    """-3 dB corner of the single-pole input RC."""
    if r_ohm <= 0 or c_farad <= 0:
        raise ValueError("R and C must be positive")
    return 1.0 / (2.0 * math.pi * r_ohm * c_farad)


def front_end_warnings(rate_hz, r_ohm=FRONT_END_R_OHM, c_farad=FRONT_END_C_FARAD):
    """Configuration warnings for the passive input filter.

    A Nyquist frequency above the RC corner means part of the analog
    passband is already attenuated while out-of-band content can still
    alias in; flag it rather than guessing intent.
    """
    cutoff = rc_cutoff_hz(r_ohm, c_farad)
    warnings = []
    if rate_hz / 2.0 > cutoff:
        warnings.append(
            "Nyquist %.0f Hz exceeds the %.0f Hz input RC corner; raise the "
            "corner or lower the rate" % (rate_hz / 2.0, cutoff)
        )
    return warnings
