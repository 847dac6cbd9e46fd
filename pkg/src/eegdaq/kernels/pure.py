"""Batch kernels, pure numpy/Python implementation.

`eegdaq.kernels` exposes either these or the compiled mirrors from
`eegdaq._native`, chosen at import time. Integer-domain kernels (conversion
timestamps, square sources, encode/translate, pipeline event accounting) are
bit-identical across the two backends. Kernels that go through libm
(gaussian noise, sine) may differ from the compiled build by one unit in the
last place, which is at most one 24-bit code step after encoding.
"""

import numpy as np

U64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
FS_CODES = (1 << 23) - 1  # positive full scale, 8388607
NS_PER_HOUR = 3_600_000_000_000


def _mix_array(z):
    # SplitMix64 finalizer; uint64 array ops wrap without complaint.
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


def _mix_int(z):
    # Same finalizer on a Python int; numpy scalar uint64 products trap on
    # overflow under errstate, so scalars stay in Python-int land.
    z &= U64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & U64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & U64
    z ^= z >> 31
    return z


def stream_key(seed, stream):
    """Per-stream hash key; stream is typically a global channel index."""
    return _mix_int((seed & U64) ^ _mix_int((stream + GOLDEN) & U64))


def gauss_counter(seed, stream, start, n):
    """Standard normal draws for counters start..start+n-1 of one stream.

    Counter-addressed (draw j consumes the uint64 hashes at positions 2j and
    2j+1), so any slice can be generated independently of any other and the
    scalar and batch paths agree bit for bit.
    """
    key = np.uint64(stream_key(seed, stream))
    c = np.arange(2 * start, 2 * (start + n), 2, dtype=np.uint64)
    a = _mix_array(key + c * np.uint64(GOLDEN))
    b = _mix_array(key + (c + np.uint64(1)) * np.uint64(GOLDEN))
    # (0,1] for the log argument, [0,1) for the angle
    u1 = ((a >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (b >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def square_batch(k0, n, cycles_per_sample, amp, duty=0.5, phase0=0.0):
    """Square source sampled at frame indices k0..k0+n-1.

    Phase is computed as an exact multiply-and-mod per index, not an
    accumulation, so any window of the stream is reproducible and both
    backends agree bitwise.
    """
    k = np.arange(k0, k0 + n, dtype=np.float64)
    phase = (k * cycles_per_sample + phase0) % 1.0
    return np.where(phase < duty, amp, -amp)


def sine_batch(k0, n, cycles_per_sample, amp, phase0=0.0):
    k = np.arange(k0, k0 + n, dtype=np.float64)
    return amp * np.sin((k * cycles_per_sample + phase0) * (2.0 * np.pi))


def encode_batch(volts, gain, vref):
    """Volts to 24-bit two's-complement codes (stored sign-extended in i32).

    Saturates at the rails and reports how many samples clipped.
    """
    scale = gain * float(FS_CODES) / vref
    x = np.rint(np.asarray(volts, dtype=np.float64) * scale)
    nclip = int(np.count_nonzero((x > FS_CODES) | (x < -(1 << 23))))
    codes = np.clip(x, -(1 << 23), FS_CODES).astype(np.int32)
    return codes, nclip


def translate_batch(codes, gain, vref):
    """Codes back to volts: the exact inverse of encode away from the rails.

    Both backends multiply by the same precomputed quantum so results match
    bitwise.
    """
    q = vref / (gain * float(FS_CODES))
    return np.asarray(codes, dtype=np.float64) * q


def drdy_times_us(k0, n, t0_us, period_us):
    """Conversion-edge timestamps in integer microseconds.

    t_k = t0 + rint(k * period): a multiplication, never an accumulation, so
    the schedule carries no cumulative rounding error and is identical on
    both backends.
    """
    k = np.arange(k0, k0 + n, dtype=np.float64)
    return np.rint(k * period_us).astype(np.int64) + int(t0_us)


def soak_values(k0, n, cyc, amp, duty, phase0, noise_rms, seed, gain, vref):
    """Generate and encode one chunk of frames for every channel at once.

    Square/dc sources (dc is duty=1.0) plus optional per-channel gaussian
    noise. Returns a wrapping uint64 sum of the sign-extended codes and the
    clip count; the long soak keeps only these, so no per-sample arrays
    survive the call. Results are bit-identical to square_batch followed by
    encode_batch.
    """
    checksum = 0
    nclip = 0
    for ch in range(len(cyc)):
        v = square_batch(k0, n, cyc[ch], amp[ch], duty[ch], phase0[ch])
        if noise_rms[ch] > 0.0:
            v = v + noise_rms[ch] * gauss_counter(seed, ch, k0, n)
        codes, nc = encode_batch(v, gain, vref)
        nclip += nc
        checksum = (
            checksum + int(np.add.reduce(codes.astype(np.int64).astype(np.uint64)))
        ) & U64
    return checksum, nclip


# Pipeline event accounting. All event arithmetic is int64 nanoseconds so
# that max/plus recurrences are exact and both backends agree bitwise.
#
# state slot layout (int64):
#   0 x_prev   last FIFO push completion
#   1 y_prev   last FIFO pop completion / packager free time
#   2 rec_free    recorder decode context free time
#   3 store_free  storage context free time
#   4 plot_free   visualization context free time
#   5 packets     packets completed
#   6 mp_loss     frames lost to ping-pong overwrite
#   7 overruns    fetches that outlived their sampling period
#
# maxima layout: flat int64[4 * n_hours], dimension-major
#   (0 adc, 1 trans, 2 save, 3 plot), bucketed by the hour of the packet's
#   first conversion edge.

STATE_SLOTS = 8
DIM_ADC, DIM_TRANS, DIM_SAVE, DIM_PLOT = 0, 1, 2, 3


def des_advance(
    state,
    ring,
    maxima,
    k0,
    n,
    period_ns,
    fetch_ns,
    fmt_ns,
    pop_ns,
    pkg_busy_ns,
    net_ns,
    dec_batch_ns,
    seg_batch_ns,
    plot_batch_ns,
    half,
    pkt,
):
    """Advance the pipeline event model across frames k0..k0+n-1.

    Models the acquisition engine's event chain: the conversion edge at
    t = rint(k * period_ns); the frame fetch (fetch_ns); half-buffer handoff
    after `half` frames; the formatter pushing fixed-size records into a
    FIFO bounded at len(ring) records (push blocks on the pop that is
    len(ring) records behind); the packager popping records and, every `pkt`
    records, serializing and transmitting (pkg_busy_ns); and the recorder's
    decode, storage and plot contexts as free-time clocks. Updates per-hour
    delay maxima for the four delay dimensions.

    Requires k0 and n to be multiples of `pkt` (the chunk driver guarantees
    it), so no partial half or packet state crosses calls.
    """
    if n % pkt or k0 % pkt or pkt % half:
        raise ValueError("chunk must be aligned to whole packets")
    cap = len(ring)
    ring_l = [int(v) for v in ring]  # numpy scalar indexing is too slow here
    n_hours = len(maxima) // 4
    x = int(state[0])
    y = int(state[1])
    rec_free = int(state[2])
    store_free = int(state[3])
    plot_free = int(state[4])
    packets = int(state[5])
    mp_loss = int(state[6])
    overruns = int(state[7])
    # One record per frame, so the ring of pending pop times is frame-keyed.
    pos = k0 % cap
    fetch = int(fetch_ns)
    c_f = int(fmt_ns)
    c_pop = int(pop_ns)

    # Fetch slower than the sampling period means every edge overruns; the
    # healthy case never takes the per-frame branch.
    slow_fetch = fetch >= int(period_ns) - 1

    for hbase in range(k0, k0 + n, half):
        # round() and C llrint both round half to even on the same double,
        # so the two backends compute identical edge times.
        d_last = round((hbase + half - 1) * period_ns)
        handoff = d_last + fetch
        if slow_fetch:
            for k in range(hbase, hbase + half):
                gap = round((k + 1) * period_ns) - round(k * period_ns)
                if fetch > gap:
                    overruns += 1
        for _ in range(half):
            ready = (x if x > handoff else handoff) + c_f
            gate = ring_l[pos]
            x = ready if ready > gate else gate
            y = (x if x > y else y) + c_pop
            ring_l[pos] = y
            pos += 1
            if pos == cap:
                pos = 0
        # The DRDY handler starts overwriting this half's slots one full
        # ping-pong cycle later; unformatted records at that point are lost.
        deadline = round((hbase + 2 * half) * period_ns)
        if x > deadline:
            mp_loss += half
        if (hbase + half) % pkt == 0:
            pkt_done = y + int(pkg_busy_ns)
            y = pkt_done
            arrive = pkt_done + int(net_ns)
            rec_free = (rec_free if rec_free > arrive else arrive) + int(
                dec_batch_ns
            )
            store_free = (
                store_free if store_free > rec_free else rec_free
            ) + int(seg_batch_ns)
            plot_free = (
                plot_free if plot_free > rec_free else rec_free
            ) + int(plot_batch_ns)
            d_first = round((hbase + half - pkt) * period_ns)
            hour = d_first // NS_PER_HOUR
            if hour >= n_hours:
                hour = n_hours - 1
            base = hour
            if maxima[DIM_ADC * n_hours + base] < fetch:
                maxima[DIM_ADC * n_hours + base] = fetch
            t_delay = pkt_done - d_first
            if maxima[DIM_TRANS * n_hours + base] < t_delay:
                maxima[DIM_TRANS * n_hours + base] = t_delay
            s_delay = store_free - d_first
            if maxima[DIM_SAVE * n_hours + base] < s_delay:
                maxima[DIM_SAVE * n_hours + base] = s_delay
            p_delay = plot_free - d_first
            if maxima[DIM_PLOT * n_hours + base] < p_delay:
                maxima[DIM_PLOT * n_hours + base] = p_delay
            packets += 1

    ring[:] = ring_l
    state[0] = x
    state[1] = y
    state[2] = rec_free
    state[3] = store_free
    state[4] = plot_free
    state[5] = packets
    state[6] = mp_loss
    state[7] = overruns
