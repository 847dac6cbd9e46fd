"""Day-scale soak evaluation in virtual time.

A simulated 24 h run must finish in minutes, so the soak never materializes
345 million frames. Each pipeline stage gets an integer-nanosecond cost
(frame fetch, record format, FIFO pop, packet serialization, network hop,
packet decode, segment write, plot update) and an exact event recurrence
advances the whole acquisition-to-recorder chain frame by frame, tracking
per-hour maxima of the four delay dimensions plus the loss counters:

    mp_loss   frames overwritten in the ping-pong buffer before formatting
    overruns  conversion edges whose fetch missed the next edge
    sw_loss   packets lost downstream of the engine; the stream path is
              blocking end to end (FIFO, storage queue, TCP), so nothing in
              the model can drop one and the counter stays structural

Default stage costs are fixed so soak reports are reproducible; pass
costs=measure_costs() to use figures measured on this machine instead. An
optional second pass generates and encodes every sample of the simulated
day in chunks (square sources only, so both kernel backends agree bitwise)
to show the data path itself sustains the volume.
"""

import time

import numpy as np

from . import kernels, wire

PACKET_SAMPLES = 160
HALF_FRAMES = 40

# Desk-class stage costs in nanoseconds. Fixed values keep the soak
# deterministic; measure_costs() replaces them with live measurements.
DEFAULT_COSTS_NS = {
    "fetch_ns": 60_000,  # SPI frame read across a 4-device chain
    "fmt_ns": 4_000,  # translate + pack + FIFO push, per record
    "pop_ns": 500,  # FIFO pop, per record
    "pkg_busy_ns": 2_000_000,  # serialize one 160-sample packet
    "net_ns": 150_000,  # loopback hop for one packet
    "dec_batch_ns": 1_500_000,  # parse one packet at the recorder
    "seg_batch_ns": 400_000,  # append one packet's rows to segments
    "plot_batch_ns": 300_000,  # decimate + JSON one packet
}

DIM_NAMES = ("adc", "trans", "save", "plot")
_DIMS = {
    "adc": kernels.DIM_ADC,
    "trans": kernels.DIM_TRANS,
    "save": kernels.DIM_SAVE,
    "plot": kernels.DIM_PLOT,
}


def sample_packet_bytes(channels, device_count, seed=0):
    """Wire size of one real packet with noise-like channel values."""
    values = 1e-4 * kernels.gauss_counter(seed, 12345, 0, PACKET_SAMPLES * channels)
    values = values.reshape(PACKET_SAMPLES, channels)
    status = [0xC00000] * device_count
    rows = [
        wire.sample_text(250 * i, status, values[i].tolist())
        for i in range(PACKET_SAMPLES)
    ]
    return len(wire.encode_packet_rows("soak", 0, rows))


def measure_costs(device_count=4, rate_hz=4000, gain=24, reps=200):
    """Per-stage costs measured on this machine, in integer nanoseconds.

    Quick by design (about a second); medians over short bursts, so a
    stray scheduler hiccup does not poison the model.
    """
    import socket
    import struct
    import tempfile

    from .chain import CMD_RDATAC, CMD_SDATAC, CMD_START, DeviceChain, SpiLink
    from .fifo import SampleFifo
    from .recorder.storage import SegmentStore
    from .registers import MUX_NORMAL, acquisition_profile

    channels = 8 * device_count
    costs = {}

    def timed(fn, n):
        best = []
        for _ in range(5):
            t0 = time.perf_counter_ns()
            for _ in range(n):
                fn()
            best.append((time.perf_counter_ns() - t0) / n)
        best.sort()
        return int(best[len(best) // 2])

    chain = DeviceChain(device_count)
    chain.power_on_reset()
    link = SpiLink(chain)
    link.command(CMD_SDATAC)
    for addr, value in acquisition_profile(rate_hz, gain, MUX_NORMAL).items():
        link.write_registers(addr, [value])
    link.command(CMD_START)
    link.command(CMD_RDATAC)

    def fetch():
        chain.step_conversion()
        link.read_frame()

    costs["fetch_ns"] = timed(fetch, reps)

    rec = struct.Struct("<q%dI%dd" % (device_count, channels))
    fifo = SampleFifo(1 << 22)
    codes = np.arange(HALF_FRAMES * channels, dtype=np.int32)
    status = [0xC00000] * device_count

    def fmt():
        volts = kernels.translate_batch(codes, float(gain), 4.5)
        volts = volts.reshape(HALF_FRAMES, channels)
        for i in range(HALF_FRAMES):
            fifo.push(rec.pack(250 * i, *status, *volts[i].tolist()))

    costs["fmt_ns"] = timed(fmt, max(1, reps // 10)) // HALF_FRAMES

    # Top up so the pop timing can never block on an empty FIFO.
    need = max(1, reps // 10) * 5 * HALF_FRAMES + HALF_FRAMES
    filler = rec.pack(0, *status, *([0.0] * channels))
    for _ in range(max(0, need - fifo.stats()["queued_records"])):
        fifo.push(filler)

    def pop():
        fifo.pop_chunk(HALF_FRAMES)

    costs["pop_ns"] = timed(pop, max(1, reps // 10)) // HALF_FRAMES

    values = 1e-4 * kernels.gauss_counter(0, 1, 0, PACKET_SAMPLES * channels)
    values = values.reshape(PACKET_SAMPLES, channels)
    rows = [
        wire.sample_text(250 * i, status, values[i].tolist())
        for i in range(PACKET_SAMPLES)
    ]

    def pkg():
        wire.encode_packet_rows("soak", 0, rows)

    costs["pkg_busy_ns"] = timed(pkg, max(1, reps // 10))

    packet = wire.encode_packet_rows("soak", 0, rows)
    a, b = socket.socketpair()
    try:
        def net():
            a.sendall(packet)
            got = 0
            while got < len(packet):
                got += len(b.recv(1 << 20))

        costs["net_ns"] = timed(net, max(1, reps // 10))
    finally:
        a.close()
        b.close()

    def dec():
        state = wire.DecoderState()
        state.feed(packet)

    costs["dec_batch_ns"] = timed(dec, max(1, reps // 10))

    sample_rows = [
        (250 * i, tuple(status), values[i].tolist()) for i in range(PACKET_SAMPLES)
    ]
    with tempfile.TemporaryDirectory() as tmp:
        store = SegmentStore(tmp, rate_hz, device_count, channels)

        def seg():
            store.append_samples(sample_rows)

        costs["seg_batch_ns"] = timed(seg, max(1, reps // 10))
        store.close()

    import json

    def plot():
        pts_t = [250 * i for i in range(0, PACKET_SAMPLES, 2)]
        pts_ch = [values[i].tolist() for i in range(0, PACKET_SAMPLES, 2)]
        json.dumps({"t": pts_t, "ch": pts_ch}, separators=(",", ":"))

    costs["plot_batch_ns"] = timed(plot, max(1, reps // 10))
    return costs


def soak(hours=24.0, rate_hz=4000, device_count=4, gain=24, ppm=0.0,
         costs=None, values=False, seed=0, half=HALF_FRAMES,
         packet_samples=PACKET_SAMPLES, fifo_bytes=4096, chunk_packets=8192,
         amplitude=30e-6, vref=4.5):
    """Run the day-scale pipeline model; returns the soak report dict."""
    if hours <= 0:
        raise ValueError("hours must be positive")
    if packet_samples % half:
        raise ValueError("packet size must be a whole number of half buffers")
    channels = 8 * device_count
    stage = dict(DEFAULT_COSTS_NS)
    if costs:
        stage.update(costs)

    frames = int(round(hours * 3600.0 * rate_hz))
    frames += (-frames) % packet_samples  # whole packets only
    period_ns = 1e9 / (rate_hz * (1.0 + ppm * 1e-6))
    record_bytes = 8 + 4 * device_count + 8 * channels
    cap_records = max(1, fifo_bytes // record_bytes)
    n_hours = max(1, int(np.ceil(hours)))

    state = np.zeros(kernels.STATE_SLOTS, dtype=np.int64)
    ring = np.zeros(cap_records, dtype=np.int64)
    maxima = np.zeros(4 * n_hours, dtype=np.int64)

    t_start = time.perf_counter()
    wall0 = t_start
    chunk = chunk_packets * packet_samples
    for k0 in range(0, frames, chunk):
        n = min(chunk, frames - k0)
        kernels.des_advance(
            state, ring, maxima, k0, n, period_ns,
            stage["fetch_ns"], stage["fmt_ns"], stage["pop_ns"],
            stage["pkg_busy_ns"], stage["net_ns"], stage["dec_batch_ns"],
            stage["seg_batch_ns"], stage["plot_batch_ns"], half, packet_samples,
        )
    des_seconds = time.perf_counter() - wall0

    packets = int(state[5])
    mp_loss = int(state[6])
    overruns = int(state[7])

    per_hour = {}
    for name, dim in _DIMS.items():
        row = maxima[dim * n_hours : (dim + 1) * n_hours]
        per_hour[name] = [float(v) / 1e9 for v in row]
    max_delay = {name: max(row) for name, row in per_hour.items()}

    report = {
        "hours": hours,
        "hours_modeled": n_hours,
        "rate_hz": rate_hz,
        "device_count": device_count,
        "channels": channels,
        "frames": frames,
        "packets": packets,
        "packet_samples": packet_samples,
        "mp_loss": mp_loss,
        "sw_loss": 0,  # no drop path exists between engine and recorder
        "overruns": overruns,
        "fifo_records": cap_records,
        "costs_ns": stage,
        "packet_bytes": sample_packet_bytes(channels, device_count, seed),
        "per_hour_max_s": per_hour,
        "max_delay_s": max_delay,
        "max_delay_per_hour_s": {
            name: value / hours for name, value in max_delay.items()
        },
        "first_hour_max_s": {name: row[0] for name, row in per_hour.items()},
        "final_hour_max_s": {name: row[-1] for name, row in per_hour.items()},
        "backend": kernels.BACKEND,
        "model_seconds": des_seconds,
    }

    if values:
        wall0 = time.perf_counter()
        # Per-channel square sources; integer-exact generation keeps the
        # checksum identical on both kernel backends.
        freq = np.array([1.0 + 0.25 * ch for ch in range(channels)])
        cyc = freq / rate_hz
        amp = np.full(channels, amplitude)
        duty = np.full(channels, 0.5)
        phase0 = np.zeros(channels)
        noise = np.zeros(channels)
        checksum = 0
        clipped = 0
        vchunk = 1 << 20
        for k0 in range(0, frames, vchunk):
            n = min(vchunk, frames - k0)
            c, nc = kernels.soak_values(
                k0, n, cyc, amp, duty, phase0, noise, seed, float(gain), vref
            )
            checksum = (checksum + c) & 0xFFFFFFFFFFFFFFFF
            clipped += nc
        report["values_checksum"] = "%016x" % checksum
        report["values_clipped"] = clipped
        report["values_seconds"] = time.perf_counter() - wall0

    report["elapsed_s"] = time.perf_counter() - t_start
    return report
