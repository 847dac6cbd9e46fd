"""Compare the compiled kernel backend against the pure numpy fallback.

Times each batch kernel on both implementations, checks that their outputs
agree (bitwise for the integer-domain kernels), and finishes with a
one-hour pipeline model run through each backend. Run from the repository
root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from eegdaq import kernels, virtualtime
from eegdaq.kernels import pure

try:
    from eegdaq import _native as native
except ImportError:
    native = None

N_FRAMES = 163_840  # one mid-size generator batch, 1024 wire packets
CHANNELS = 32
GAIN = 24
VREF = 4.5


def best_of(fn, reps=5):
    """Fastest wall time of `reps` calls, in seconds."""
    best = None
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        if best is None or dt < best:
            best = dt
    return best


def bitwise(a, b):
    return np.array_equal(np.asarray(a), np.asarray(b))


def close(a, b):
    return np.allclose(a, b, rtol=0.0, atol=1e-12)


def des_args(impl_module):
    state = np.zeros(kernels.STATE_SLOTS, dtype=np.int64)
    ring = np.zeros(40, dtype=np.int64)
    maxima = np.zeros(4, dtype=np.int64)
    costs = virtualtime.DEFAULT_COSTS_NS
    return (
        state, ring, maxima, 0, N_FRAMES, 250_000.0,
        costs["fetch_ns"], costs["fmt_ns"], costs["pop_ns"],
        costs["pkg_busy_ns"], costs["net_ns"], costs["dec_batch_ns"],
        costs["seg_batch_ns"], costs["plot_batch_ns"], 80, 160,
    )


def soak_args():
    cyc = np.full(CHANNELS, 10.0 / 4000.0)
    amp = np.full(CHANNELS, 30e-6)
    duty = np.full(CHANNELS, 0.5)
    phase0 = np.zeros(CHANNELS)
    noise = np.full(CHANNELS, 1e-6)
    return (0, 4096, cyc, amp, duty, phase0, noise, 3, GAIN, VREF)


def cases():
    volts = pure.sine_batch(0, N_FRAMES, 10.0 / 4000.0, 30e-6)
    codes = pure.encode_batch(volts, GAIN, VREF)[0]
    yield ("gauss_counter", N_FRAMES,
           lambda m: m.gauss_counter(3, 5, 0, N_FRAMES), close)
    yield ("square_batch", N_FRAMES,
           lambda m: m.square_batch(0, N_FRAMES, 10.0 / 4000.0, 30e-6), bitwise)
    yield ("encode_batch", N_FRAMES,
           lambda m: m.encode_batch(volts, GAIN, VREF)[0], bitwise)
    yield ("translate_batch", N_FRAMES,
           lambda m: m.translate_batch(codes, GAIN, VREF), bitwise)
    yield ("drdy_times_us", N_FRAMES,
           lambda m: m.drdy_times_us(0, N_FRAMES, 0, 250.0), bitwise)
    yield ("soak_values (32 ch)", 4096 * CHANNELS,
           lambda m: m.soak_values(*soak_args()), bitwise)
    yield ("des_advance", N_FRAMES,
           lambda m: (m.des_advance(*des_args(m)), None)[1] or 0, None)


def main():
    if native is None:
        print("compiled backend not built; run: python3 setup.py build_ext --inplace")
        return
    print("active backend: %s" % kernels.BACKEND)
    print()
    print("%-22s %12s %12s %9s  %s" % ("kernel", "pure", "native", "speedup", "agree"))
    for name, n_items, call, check in cases():
        t_pure = best_of(lambda: call(pure))
        t_nat = best_of(lambda: call(native))
        if check is None:
            # des_advance mutates its arrays; compare final state instead.
            a_pure, a_nat = des_args(pure), des_args(native)
            pure.des_advance(*a_pure)
            native.des_advance(*a_nat)
            agree = all(bitwise(x, y) for x, y in zip(a_pure[:3], a_nat[:3]))
        else:
            agree = check(call(pure), call(native))
        per_pure = t_pure / n_items * 1e9
        per_nat = t_nat / n_items * 1e9
        print("%-22s %9.1f ns %9.1f ns %8.1fx  %s"
              % (name, per_pure, per_nat, t_pure / t_nat,
                 "yes" if agree else "NO"))

    print()
    for backend, impl in (("pure", pure), ("native", native)):
        saved = kernels.des_advance
        kernels.des_advance = impl.des_advance
        try:
            t0 = time.perf_counter()
            report = virtualtime.soak(hours=1.0, rate_hz=4000, device_count=4)
            dt = time.perf_counter() - t0
        finally:
            kernels.des_advance = saved
        print("1 h pipeline model, %-6s backend: %6.2f s wall, "
              "%d packets, mp_loss=%d"
              % (backend, dt, report["packets"], report["mp_loss"]))


if __name__ == "__main__":
    main()
