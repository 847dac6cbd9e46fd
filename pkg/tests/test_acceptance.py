"""End-to-end conformance gate.

Ten checks with pinned tolerances, one summary line each, exercising the
shipped pipeline through its public surfaces: register configuration, frame
layout, noise and rejection benchmarks, loss-free soak behavior, wire/file
bit identity, framing robustness, stimulus alignment and band power. Check
06 holds a live paced session for ten minutes of wall time, so this module
dominates the suite's duration.
"""

import random
import time

import numpy as np

from eegdaq import kernels, metrics, registers, signals, virtualtime, wire
from eegdaq.chain import (
    BYTES_PER_DEVICE,
    CMD_RDATAC,
    CMD_SDATAC,
    CMD_START,
    NOMINAL_CLOCK_HZ,
    TEST_FREQ_DIVIDER,
    DeviceChain,
    SpiLink,
)
from eegdaq.config import AcqConfig
from eegdaq.engine import AcquisitionEngine, configure
from eegdaq.recorder import RecorderService, read_session_file

# Reference register bytes for 4 kHz, gain 24, normal electrode inputs.
TABLE_BYTES = {
    registers.REG_CONFIG1: 0x92,
    registers.REG_CONFIG2: 0xC0,
    registers.REG_CONFIG3: 0xEC,
    registers.REG_LOFF_SENSP: 0x00,
    registers.REG_LOFF_SENSN: 0x00,
    registers.REG_MISC1: 0x20,
}
for _addr in range(registers.REG_CH1SET, registers.REG_CH8SET + 1):
    TABLE_BYTES[_addr] = 0x60

DR_TO_RATE = {0b110: 250, 0b101: 500, 0b100: 1000, 0b011: 2000, 0b010: 4000}

# Published noise floor per rate, as effective bits at gain 24.
ENOB_TARGETS = {250: 19.85, 500: 19.35, 1000: 18.85, 2000: 18.35, 4000: 17.84}


def run_loopback(config, directory, mode="fast", chain=None):
    """Engine streaming into a recorder over loopback TCP. Returns the
    engine report and the still-open service so callers can add stimulus
    events before finalizing."""
    service = RecorderService.from_config(config, str(directory)).start()
    config.server = ("127.0.0.1", service.data_port)
    engine = AcquisitionEngine(config, chain=chain, mode=mode)
    report = engine.run()
    deadline = time.monotonic() + 60
    while not service._engine_done.is_set() and time.monotonic() < deadline:
        time.sleep(0.01)
    return report, service


def test_01_register_readback_matches_reference_bytes():
    t0 = time.perf_counter()
    config = AcqConfig()  # defaults: 4 kHz, gain 24, normal inputs
    link = SpiLink(DeviceChain(1))
    configure(link, config)
    link.command(CMD_SDATAC)
    regs = link.read_registers(0x00, registers.N_REGS)
    for addr, want in TABLE_BYTES.items():
        assert regs[addr] == want, "reg %#04x: %#04x != %#04x" % (
            addr, regs[addr], want)
    assert regs[registers.REG_ID] & 0x0F == 0x0E
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    print("PASS 01 register readback: %d bytes exact, id nibble 0xE (%.2f s < 1 s)"
          % (len(TABLE_BYTES), elapsed))


def test_02_rate_map_and_exact_frame_spacing():
    t0 = time.perf_counter()
    for dr, rate in DR_TO_RATE.items():
        chain = DeviceChain(1, start_time_us=0)
        link = SpiLink(chain)
        link.command(CMD_SDATAC)
        link.write_registers(registers.REG_CONFIG1, [0x90 | dr])
        assert chain.sample_rate_hz == rate
        link.command(CMD_START)
        link.command(CMD_RDATAC)
        times = [chain.step_conversion()[1] for _ in range(25)]
        spacing = {b - a for a, b in zip(times, times[1:])}
        assert spacing == {1_000_000 // rate}, (rate, spacing)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    print("PASS 02 rate map: DR->%s Hz, spacing exact (%.2f s < 1 s)"
          % (sorted(DR_TO_RATE.values()), elapsed))


def test_03_daisy_chain_frame_layout():
    t0 = time.perf_counter()
    levels = [10e-6, 20e-6, 30e-6, 40e-6]
    chain = DeviceChain(4, noise_rms_uv=0.0, start_time_us=0)
    for dev, level in enumerate(levels):
        chain.set_source(dev * 8, signals.dc(level))
    link = SpiLink(chain)
    configure(link, AcqConfig())
    chain.step_conversion()
    raw = link.read_frame()
    assert len(raw) == BYTES_PER_DEVICE * 4 == 108
    seen = []
    for dev in range(4):
        chunk = raw[dev * BYTES_PER_DEVICE:(dev + 1) * BYTES_PER_DEVICE]
        assert chunk[0] >> 4 == 0xC
        code = int.from_bytes(chunk[3:6], "big", signed=True)
        volts = code * chain.vref / (24 * float(kernels.FS_CODES))
        assert abs(volts - levels[dev]) < 0.1e-6, (dev, volts)
        seen.append(volts)
    assert seen == sorted(seen)  # device 1 first, in wiring order
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    print("PASS 03 daisy chain: 108-byte frame, status nibble 0xC, "
          "device order by level (%.2f s < 1 s)" % elapsed)


def test_04_noise_floor_enob_and_dynamic_range():
    t0 = time.perf_counter()
    results = {}
    for rate, target in ENOB_TARGETS.items():
        stats = metrics.noise_stats(metrics.measure_noise(rate, n_samples=1_000_000))
        bits = metrics.enob(stats["rms"])
        dyn = metrics.dynamic_range_db(stats["rms"])
        assert abs(bits - target) <= 0.15, (rate, bits, target)
        # 6.0206 is 20*log10(2) rounded to four decimals. The identity is
        # exact against the unrounded constant; against the rounded one the
        # floor is the rounding error itself (about 2.6e-6 dB at 20 bits).
        assert abs(dyn - bits * metrics.DB_PER_BIT) <= 1e-9
        assert abs(dyn - bits * 6.0206) <= 5e-5
        results[rate] = bits
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print("PASS 04 noise floor: enob %s within 0.15, range = enob*20log2 "
          "(%.1f s < 30 s)"
          % ({r: round(b, 3) for r, b in results.items()}, elapsed))


def test_05_common_mode_rejection_recovery():
    t0 = time.perf_counter()
    for setting in (80.0, 90.0, 100.0):
        report = metrics.measure_cmrr(rejection_db=setting, rate_hz=1000)
        assert len(report["per_freq"]) == 10
        assert min(report["per_freq"]) >= 1 and max(report["per_freq"]) <= 70
        assert report["min_db"] >= setting - 1.0, (setting, report["min_db"])
        assert report["max_db"] <= setting + 1.0, (setting, report["max_db"])
    default = metrics.measure_cmrr(rate_hz=1000)
    assert default["min_db"] >= 80.0
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print("PASS 05 rejection: 80/90/100 dB recovered within 1 dB over "
          "1-70 Hz, default profile min %.1f dB >= 80 (%.1f s < 30 s)"
          % (default["min_db"], elapsed))


def test_06_zero_loss_soak_virtual_and_wall(tmp_path):
    # Part one: 24 modeled hours at 4 kHz x 32 channels in virtual time.
    t0 = time.perf_counter()
    soak = virtualtime.soak(hours=24.0, rate_hz=4000, device_count=4, seed=3)
    virtual_elapsed = time.perf_counter() - t0
    assert soak["mp_loss"] == 0 and soak["sw_loss"] == 0
    assert soak["frames"] == soak["packets"] * 160
    for name, first in soak["first_hour_max_s"].items():
        final = soak["final_hour_max_s"][name]
        assert final <= 2.0 * first, (name, first, final)
    assert virtual_elapsed < 300.0

    # Part two: ten wall-clock minutes of paced loopback, no sequence gaps.
    config = AcqConfig()
    config.set("session_id", "soak-wall")
    config.set("rate_hz", "4000")
    config.set("device_count", "4")
    config.set("seed", "3")
    config.set("start_time_us", "0")
    config.set("duration_s", "600")
    config.set("source.1", "sine:amp=30e-6,freq=10")
    config.set("source.9", "sine:amp=20e-6,freq=7")
    config.validate()
    report, service = run_loopback(config, tmp_path, mode="paced")
    final = service.finalize()
    service.close()
    assert report.frames == 2_400_000
    assert final["gaps"] == 0
    assert final["samples_received"] == report.packets * 160 == report.frames
    assert final["stream_digest"] == report.digest
    print("PASS 06 soak: virtual 24 h zero loss, final/first hour delay "
          "bounded (%.1f s < 300 s); wall 600 s paced run %d samples, "
          "0 gaps" % (virtual_elapsed, final["samples_received"]))


def test_07_file_stream_bit_identity(tmp_path):
    t0 = time.perf_counter()
    config = AcqConfig()
    config.set("session_id", "integrity")
    config.set("rate_hz", "4000")
    config.set("device_count", "1")
    config.set("seed", "7")
    config.set("start_time_us", "0")
    config.set("duration_s", "600")  # 2,400,000 samples, fast mode
    config.set("source.1", "sine:amp=30e-6,freq=10")
    config.validate()
    report, service = run_loopback(config, tmp_path, mode="fast")
    final = service.finalize()
    service.close()
    assert report.frames == 2_400_000
    assert final["samples_stored"] == 2_400_000
    assert final["stream_digest"] == report.digest

    # Third, independent route: re-serialize every stored sample and hash.
    header, columns = read_session_file(final["path"])
    digest = wire.StreamDigest()
    n = len(columns["t"])
    step = 200_000
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        for row in zip(columns["t"][lo:hi].tolist(),
                       columns["status"][lo:hi].tolist(),
                       columns["ch"][lo:hi].tolist()):
            digest.update_row(wire.sample_text(*row))
    assert digest.hexdigest() == report.digest
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print("PASS 07 bit identity: engine, receiver and file digests agree "
          "over %d samples (%.1f s < 120 s)" % (n, elapsed))


def test_08_any_chunking_decodes_identically():
    t0 = time.perf_counter()
    rng = random.Random(2024)
    packets = []
    for seq, count in enumerate((5, 23, 0, 9, 2)):
        samples = [
            wire.Sample(
                250 * k,
                [0xC00000, 0xC00001],
                [rng.uniform(-1e-3, 1e-3) * 10 ** rng.randint(-4, 0)
                 for _ in range(4)] + [0.0, -0.0, 1e-12, -2.0 / 3.0],
            )
            for k in range(count)
        ]
        packets.append(wire.DataPacket("chunking", seq, samples))
    stream = b"".join(wire.encode_packet(p) for p in packets)
    reference = wire.DecoderState().feed(stream)
    assert reference == packets

    trials = 10_000
    for _ in range(trials):
        cuts = sorted(rng.sample(range(1, len(stream)), rng.randint(0, 12)))
        state = wire.DecoderState()
        got = []
        last = 0
        for cut in cuts + [len(stream)]:
            got.extend(state.feed(stream[last:cut]))
            last = cut
        assert got == reference
        assert state.residue == b""
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print("PASS 08 framing: %d random partitions of a %d-byte stream decode "
          "identically (%.1f s < 30 s)" % (trials, len(stream), elapsed))


def test_09_stimulus_aligns_with_injected_marker(tmp_path):
    t0 = time.perf_counter()
    marker_index, marker_channel = 4321, 2
    config = AcqConfig()
    config.set("session_id", "sync")
    config.set("rate_hz", "4000")
    config.set("device_count", "1")
    config.set("seed", "11")
    config.set("start_time_us", "0")
    config.set("duration_s", "2.0")
    config.validate()
    chain = DeviceChain(1, seed=11, start_time_us=0)
    chain.schedule_marker(marker_index, channel=marker_channel,
                          amplitude=100e-6, width=4)

    report, service = run_loopback(config, tmp_path, mode="fast", chain=chain)
    # The operator's press carries the instant the marker fired. Ask the
    # chain after the run, once the engine has programmed the output rate.
    t_marker_us = chain.drdy_time_us(marker_index)
    service.record_stimulus("flash", 1.0, t_press_us=t_marker_us)
    _, press_to_log_us = service.record_stimulus("tap")  # wall-clock press
    final = service.finalize()
    service.close()

    flash = [a for a in final["annotations"] if a["event"]["label"] == "flash"]
    assert len(flash) == 1 and flash[0]["aligned"]
    annotated = flash[0]["sample_index"]
    assert abs(flash[0]["offset_us"]) <= 250

    header, columns = read_session_file(final["path"])
    spike = columns["ch"][:, marker_channel]
    hits = np.nonzero(spike > 50e-6)[0]
    assert hits.size > 0 and hits[0] == marker_index
    assert abs(annotated - hits[0]) <= 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    print("PASS 09 time sync: stimulus snapped to sample %d vs marker %d "
          "(within 1 sample / 250 us); press-to-log %d us informational "
          "(%.1f s < 60 s)"
          % (annotated, hits[0], press_to_log_us, elapsed))


def test_10_band_power_and_front_end_cutoff(tmp_path):
    t0 = time.perf_counter()
    # A 10 Hz sine should concentrate nearly all power in the alpha band.
    chain = DeviceChain(1, seed=5, start_time_us=0)
    chain.execute_command(CMD_SDATAC)
    for addr, value in registers.acquisition_profile(250, 24).items():
        chain.write_registers(addr, [value])
    chain.set_source(0, signals.sine(50e-6, 10.0))
    codes, _, _ = chain.conversion_block(0, 30 * 250)
    volts = kernels.translate_batch(codes[0], 24, chain.vref)
    alpha = metrics.band_fraction(volts, 250, "alpha")
    assert alpha >= 0.90

    # The on-chip square test signal, recorded through the whole pipeline,
    # lands on its clock-derived frequency to within one spectral bin.
    config = AcqConfig()
    config.set("session_id", "testsig")
    config.set("rate_hz", "250")
    config.set("mux", "test")
    config.set("seed", "3")
    config.set("start_time_us", "0")
    config.set("duration_s", "16")
    config.validate()
    report, service = run_loopback(config, tmp_path, mode="fast")
    final = service.finalize()
    service.close()
    header, columns = read_session_file(final["path"])
    expected_hz = NOMINAL_CLOCK_HZ / TEST_FREQ_DIVIDER  # 0.9765625
    dominant = metrics.dominant_frequency(
        columns["ch"][:, 0], 250, lo_hz=0.4, hi_hz=50.0)
    bin_hz = 0.5  # 2 s analysis segments
    assert abs(dominant - expected_hz) <= bin_hz, (dominant, expected_hz)

    cutoff = metrics.rc_cutoff_hz(4.7e3, 4700e-12)
    assert abs(cutoff - 7205.0) <= 1.0
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print("PASS 10 band power: alpha fraction %.3f >= 0.90; test signal at "
          "%.4f Hz vs %.7f expected (1 bin); front-end cutoff %.1f Hz = "
          "7205 +/- 1 (%.1f s < 30 s)"
          % (alpha, dominant, expected_hz, cutoff, elapsed))
