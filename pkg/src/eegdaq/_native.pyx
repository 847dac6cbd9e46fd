# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled mirrors of the hot kernels in eegdaq.kernels.pure.

Contracts and slot layouts are documented on the pure implementations; this
module must stay drop-in compatible with them. Integer-domain kernels are
bit-identical to the pure ones; gaussian noise goes through libm and may
differ from numpy by one ulp.
"""

from libc.math cimport cos, fmod, llrint, log, rint, sqrt
from libc.stdint cimport int32_t, int64_t, uint64_t

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef uint64_t GOLDEN = <uint64_t>0x9E3779B97F4A7C15
cdef int64_t NS_PER_HOUR_C = <int64_t>3600000000000
cdef double TWO_M53 = 1.0 / 9007199254740992.0
cdef double TWO_PI = 6.283185307179586476925286766559


cdef inline uint64_t _mix(uint64_t z) nogil:
    z ^= z >> 30
    z = z * <uint64_t>0xBF58476D1CE4E5B9
    z ^= z >> 27
    z = z * <uint64_t>0x94D049BB133111EB
    z ^= z >> 31
    return z


def gauss_counter(object seed, object stream, object start, object n):
    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t st = <uint64_t>((stream + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t key = _mix(s ^ _mix(st))
    cdef int64_t start_i = start
    cdef int64_t count = n
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(count, dtype=np.float64)
    cdef double[::1] o = out
    cdef int64_t i
    cdef uint64_t c, a, b
    cdef double u1, u2
    with nogil:
        for i in range(count):
            c = (<uint64_t>(start_i + i)) * 2
            a = _mix(key + c * GOLDEN)
            b = _mix(key + (c + 1) * GOLDEN)
            u1 = (<double>((a >> 11) + 1)) * TWO_M53
            u2 = (<double>(b >> 11)) * TWO_M53
            o[i] = sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)
    return out


def square_batch(object k0, object n, double cycles_per_sample, double amp,
                 double duty=0.5, double phase0=0.0):
    cdef int64_t base = k0
    cdef int64_t count = n
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(count, dtype=np.float64)
    cdef double[::1] o = out
    cdef int64_t i
    cdef double phase
    with nogil:
        for i in range(count):
            phase = fmod((<double>(base + i)) * cycles_per_sample + phase0, 1.0)
            o[i] = amp if phase < duty else -amp
    return out


def encode_batch(object volts, object gain, double vref):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.ascontiguousarray(
        volts, dtype=np.float64
    )
    cdef double scale = (<double>gain) * 8388607.0 / vref
    cdef int64_t count = v.shape[0]
    cdef cnp.ndarray[cnp.int32_t, ndim=1] codes = np.empty(count, dtype=np.int32)
    cdef int32_t[::1] c = codes
    cdef double[::1] vv = v
    cdef int64_t i, nclip = 0
    cdef double x
    with nogil:
        for i in range(count):
            x = rint(vv[i] * scale)
            if x > 8388607.0:
                x = 8388607.0
                nclip += 1
            elif x < -8388608.0:
                x = -8388608.0
                nclip += 1
            c[i] = <int32_t>x
    return codes, nclip


def translate_batch(object codes, object gain, double vref):
    cdef cnp.ndarray[cnp.int32_t, ndim=1] cc = np.ascontiguousarray(
        codes, dtype=np.int32
    )
    cdef double q = vref / ((<double>gain) * 8388607.0)
    cdef int64_t count = cc.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(count, dtype=np.float64)
    cdef double[::1] o = out
    cdef int32_t[::1] ci = cc
    cdef int64_t i
    with nogil:
        for i in range(count):
            o[i] = (<double>ci[i]) * q
    return out


def drdy_times_us(object k0, object n, object t0_us, double period_us):
    cdef int64_t base = k0
    cdef int64_t count = n
    cdef int64_t t0 = t0_us
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(count, dtype=np.int64)
    cdef int64_t[::1] o = out
    cdef int64_t i
    with nogil:
        for i in range(count):
            o[i] = llrint((<double>(base + i)) * period_us) + t0
    return out


def soak_values(object k0, object n, double[::1] cyc, double[::1] amp,
                double[::1] duty, double[::1] phase0, double[::1] noise_rms,
                object seed, object gain, double vref):
    cdef int64_t base = k0
    cdef int64_t count = n
    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef double scale = (<double>gain) * 8388607.0 / vref
    cdef Py_ssize_t nch = cyc.shape[0]
    cdef uint64_t checksum = 0
    cdef int64_t nclip = 0
    cdef Py_ssize_t ch
    cdef int64_t i
    cdef uint64_t key, c, a, b
    cdef double v, x, rms, u1, u2
    cdef bint noisy
    with nogil:
        for ch in range(nch):
            key = _mix(s ^ _mix(<uint64_t>ch + GOLDEN))
            rms = noise_rms[ch]
            noisy = rms > 0.0
            for i in range(count):
                x = fmod((<double>(base + i)) * cyc[ch] + phase0[ch], 1.0)
                v = amp[ch] if x < duty[ch] else -amp[ch]
                if noisy:
                    c = (<uint64_t>(base + i)) * 2
                    a = _mix(key + c * GOLDEN)
                    b = _mix(key + (c + 1) * GOLDEN)
                    u1 = (<double>((a >> 11) + 1)) * TWO_M53
                    u2 = (<double>(b >> 11)) * TWO_M53
                    v = v + rms * (sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2))
                x = rint(v * scale)
                if x > 8388607.0:
                    x = 8388607.0
                    nclip += 1
                elif x < -8388608.0:
                    x = -8388608.0
                    nclip += 1
                checksum = checksum + <uint64_t>(<int64_t>x)
    return checksum, nclip


def des_advance(cnp.int64_t[::1] state, cnp.int64_t[::1] ring,
                cnp.int64_t[::1] maxima,
                object k0, object n, double period_ns,
                object fetch_ns, object fmt_ns, object pop_ns,
                object pkg_busy_ns, object net_ns, object dec_batch_ns,
                object seg_batch_ns, object plot_batch_ns,
                int half, int pkt):
    cdef int64_t base = k0
    cdef int64_t count = n
    if count % pkt or base % pkt or pkt % half:
        raise ValueError("chunk must be aligned to whole packets")
    cdef int64_t fetch = fetch_ns
    cdef int64_t c_f = fmt_ns
    cdef int64_t c_pop = pop_ns
    cdef int64_t pkg_busy = pkg_busy_ns
    cdef int64_t net = net_ns
    cdef int64_t dec_batch = dec_batch_ns
    cdef int64_t seg_batch = seg_batch_ns
    cdef int64_t plot_batch = plot_batch_ns
    cdef int64_t cap = ring.shape[0]
    cdef int64_t n_hours = maxima.shape[0] // 4
    cdef int64_t x = state[0]
    cdef int64_t y = state[1]
    cdef int64_t rec_free = state[2]
    cdef int64_t store_free = state[3]
    cdef int64_t plot_free = state[4]
    cdef int64_t packets = state[5]
    cdef int64_t mp_loss = state[6]
    cdef int64_t overruns = state[7]
    cdef int64_t pos = base % cap
    cdef bint slow_fetch = fetch >= <int64_t>period_ns - 1
    cdef int64_t hbase, k, d_last, handoff, deadline, gap
    cdef int64_t ready, gate, pkt_done, arrive, d_first, hour, delay
    cdef int64_t n_halves = count // half
    cdef int64_t h
    cdef int r
    with nogil:
        for h in range(n_halves):
            hbase = base + h * half
            d_last = llrint((<double>(hbase + half - 1)) * period_ns)
            handoff = d_last + fetch
            if slow_fetch:
                for k in range(hbase, hbase + half):
                    gap = llrint((<double>(k + 1)) * period_ns) - llrint(
                        (<double>k) * period_ns
                    )
                    if fetch > gap:
                        overruns += 1
            for r in range(half):
                ready = (x if x > handoff else handoff) + c_f
                gate = ring[pos]
                x = ready if ready > gate else gate
                y = (x if x > y else y) + c_pop
                ring[pos] = y
                pos += 1
                if pos == cap:
                    pos = 0
            deadline = llrint((<double>(hbase + 2 * half)) * period_ns)
            if x > deadline:
                mp_loss += half
            if (hbase + half) % pkt == 0:
                pkt_done = y + pkg_busy
                y = pkt_done
                arrive = pkt_done + net
                rec_free = (rec_free if rec_free > arrive else arrive) + dec_batch
                store_free = (
                    store_free if store_free > rec_free else rec_free
                ) + seg_batch
                plot_free = (
                    plot_free if plot_free > rec_free else rec_free
                ) + plot_batch
                d_first = llrint((<double>(hbase + half - pkt)) * period_ns)
                hour = d_first // NS_PER_HOUR_C
                if hour >= n_hours:
                    hour = n_hours - 1
                if maxima[hour] < fetch:
                    maxima[hour] = fetch
                delay = pkt_done - d_first
                if maxima[n_hours + hour] < delay:
                    maxima[n_hours + hour] = delay
                delay = store_free - d_first
                if maxima[2 * n_hours + hour] < delay:
                    maxima[2 * n_hours + hour] = delay
                delay = plot_free - d_first
                if maxima[3 * n_hours + hour] < delay:
                    maxima[3 * n_hours + hour] = delay
                packets += 1
    state[0] = x
    state[1] = y
    state[2] = rec_free
    state[3] = store_free
    state[4] = plot_free
    state[5] = packets
    state[6] = mp_loss
    state[7] = overruns
