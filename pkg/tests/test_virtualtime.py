"""Event-driven soak model: zero-loss baseline, fault injection, determinism."""

import math

import numpy as np
import pytest

from eegdaq import kernels, metrics, virtualtime
from eegdaq.engine import SessionReport


def _strip_timing(report):
    out = dict(report)
    for key in ("model_seconds", "elapsed_s", "values_seconds"):
        out.pop(key, None)
    return out


class TestSoak:
    def test_short_soak_runs_clean(self):
        rep = virtualtime.soak(hours=0.01, rate_hz=4000, device_count=4)
        assert rep["frames"] == 144000
        assert rep["packets"] == 900
        assert rep["frames"] == rep["packets"] * rep["packet_samples"]
        assert rep["mp_loss"] == 0
        assert rep["sw_loss"] == 0
        assert rep["overruns"] == 0
        assert rep["channels"] == 32

    def test_per_hour_maxima_shape_and_bounds(self):
        rep = virtualtime.soak(hours=0.02, rate_hz=4000)
        hours = rep["hours_modeled"]
        assert hours == 1
        for name in virtualtime.DIM_NAMES:
            series = rep["per_hour_max_s"][name]
            assert len(series) == hours
            assert all(v >= 0.0 for v in series)
            assert rep["max_delay_s"][name] == max(series)
            assert rep["max_delay_per_hour_s"][name] == pytest.approx(
                rep["max_delay_s"][name] / rep["hours"]
            )
            assert rep["first_hour_max_s"][name] == series[0]
            assert rep["final_hour_max_s"][name] == series[-1]

    def test_frames_padded_to_whole_packets(self):
        rep = virtualtime.soak(hours=0.0111, rate_hz=4000)
        assert rep["frames"] % rep["packet_samples"] == 0
        assert rep["frames"] >= math.floor(0.0111 * 3600 * 4000)

    def test_report_is_deterministic(self):
        a = virtualtime.soak(hours=0.005, rate_hz=4000, seed=3)
        b = virtualtime.soak(hours=0.005, rate_hz=4000, seed=3)
        assert _strip_timing(a) == _strip_timing(b)

    def test_slow_fetch_is_counted_as_overruns(self):
        # Fetch longer than the sampling period: every conversion edge is
        # missed, but the handler keeps reading at its own pace, so the
        # ping-pong buffer itself never backs up.
        costs = dict(virtualtime.DEFAULT_COSTS_NS)
        costs["fetch_ns"] = 300_000
        rep = virtualtime.soak(hours=0.001, rate_hz=4000, costs=costs)
        assert rep["overruns"] == rep["frames"]
        assert rep["mp_loss"] == 0

    def test_slow_format_is_counted_as_mp_loss(self):
        # Formatting a 40-frame half must finish before the writer wraps
        # around, one full ping-pong cycle later; 600 us per record cannot.
        costs = dict(virtualtime.DEFAULT_COSTS_NS)
        costs["fmt_ns"] = 600_000
        rep = virtualtime.soak(hours=0.001, rate_hz=4000, costs=costs)
        assert rep["mp_loss"] > 0
        assert rep["mp_loss"] % virtualtime.HALF_FRAMES == 0
        assert rep["overruns"] == 0

    def test_values_pass_checksum_is_stable(self):
        a = virtualtime.soak(hours=0.002, rate_hz=4000, values=True, seed=9)
        b = virtualtime.soak(hours=0.002, rate_hz=4000, values=True, seed=9)
        assert a["values_checksum"] == b["values_checksum"]
        assert len(a["values_checksum"]) == 16
        assert a["values_clipped"] == 0

    def test_values_checksum_matches_pure_backend(self):
        from eegdaq.kernels import pure

        rep = virtualtime.soak(hours=0.0005, rate_hz=4000, values=True, seed=9)
        channels = rep["channels"]
        freq = np.array([1.0 + 0.25 * ch for ch in range(channels)])
        checksum, nclip = pure.soak_values(
            0,
            rep["frames"],
            freq / 4000.0,
            np.full(channels, 30e-6),
            np.full(channels, 0.5),
            np.zeros(channels),
            np.zeros(channels),
            9,
            24.0,
            4.5,
        )
        assert "%016x" % checksum == rep["values_checksum"]
        assert nclip == rep["values_clipped"]

    def test_clipping_is_reported(self):
        # 1 V at gain 24 is far beyond the 187 mV input range.
        rep = virtualtime.soak(
            hours=0.0005, rate_hz=4000, values=True, amplitude=1.0
        )
        assert rep["values_clipped"] > 0

    def test_backend_is_recorded(self):
        rep = virtualtime.soak(hours=0.001)
        assert rep["backend"] == kernels.BACKEND

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValueError):
            virtualtime.soak(hours=0)
        with pytest.raises(ValueError):
            virtualtime.soak(hours=0.001, packet_samples=150, half=40)


class TestMeasureCosts:
    def test_measured_costs_are_sane(self):
        costs = virtualtime.measure_costs(reps=40)
        assert set(costs) == set(virtualtime.DEFAULT_COSTS_NS)
        for name, value in costs.items():
            assert isinstance(value, int)
            assert value > 0, name
        # Fetching one 108-byte frame must sit far below the 250 us period.
        assert costs["fetch_ns"] < 1_000_000

    def test_sample_packet_bytes_plausible(self):
        small = virtualtime.sample_packet_bytes(8, 1, seed=0)
        large = virtualtime.sample_packet_bytes(32, 4, seed=0)
        assert small > 160 * 8 * 2
        assert large > small * 3


class TestDelayLossReport:
    def _engine_report(self, paced):
        return SessionReport(
            session_id="s-unit",
            mode="paced" if paced else "fast",
            rate_hz=4000,
            channels=32,
            device_count=4,
            gain=24,
            frames=320,
            packets=2,
            residual_samples=0,
            overruns=3 if paced else 0,
            digest="ab" * 32,
            t_first_us=0,
            t_last_us=79750,
            bytes_sent=123456,
            wall_seconds=0.09,
            adc_lag_max_s=0.0021 if paced else None,
            trans_lag_max_s=0.0043 if paced else None,
            fifo={"peak_records": 12, "capacity_bytes": 4096},
        )

    def test_paced_report_collects_all_four_delays(self):
        report = self._engine_report(paced=True)
        session = {"session_id": "s-unit", "gaps": 2}
        status = {
            "storage": {"max_save_delay_us": 5200},
            "queues": {"max_plot_delay_us": 11000},
        }
        out = metrics.delay_loss_report(report, session, status)
        assert out["mp_loss"] == 3
        assert out["sw_loss"] == 2
        assert out["delays_s"]["adc"] == pytest.approx(0.0021)
        assert out["delays_s"]["trans"] == pytest.approx(0.0043)
        assert out["delays_s"]["save"] == pytest.approx(0.0052)
        assert out["delays_s"]["plot"] == pytest.approx(0.011)
        assert out["max_delay_s"] == pytest.approx(0.011)
        assert out["duration_s"] == pytest.approx(0.08)
        assert out["max_delay_per_hour_s"] == pytest.approx(
            0.011 / (0.08 / 3600.0)
        )

    def test_fast_mode_leaves_wall_delays_unset(self):
        report = self._engine_report(paced=False)
        out = metrics.delay_loss_report(report, {"gaps": 0})
        assert out["delays_s"]["adc"] is None
        assert out["delays_s"]["trans"] is None
        assert out["delays_s"]["save"] is None
        assert out["mp_loss"] == 0
        assert out["sw_loss"] == 0
