"""Recorder: session state, storage, container file, service end to end."""

import json
import socket
import time
import urllib.error
import urllib.request

import numpy as np
import pytest

from eegdaq import wire
from eegdaq.config import AcqConfig
from eegdaq.engine import AcquisitionEngine, TcpTransport
from eegdaq.recorder import (
    InvalidState,
    RecorderService,
    SegmentStore,
    Session,
    StimulusEvent,
    StorageFull,
    align,
    read_session_file,
    segment_samples,
    write_session_file,
)
from eegdaq.recorder.storage import SessionFileError


def make_session(**kw):
    args = dict(session_id="s", device_count=1, channels=8, rate_hz=4000, gain=24)
    args.update(kw)
    return Session(**args)


# -- session state machine ----------------------------------------------------


def test_states_move_forward_only():
    s = make_session()
    assert s.state == "idle"
    s.begin_receiving()
    s.begin_finalizing()
    s.close()
    assert s.state == "closed"


def test_backward_or_repeat_transitions_rejected():
    s = make_session()
    s.begin_receiving()
    with pytest.raises(InvalidState):
        s.begin_receiving()
    s.begin_finalizing()
    with pytest.raises(InvalidState):
        s.begin_receiving()
    s.close()
    with pytest.raises(InvalidState):
        s.begin_finalizing()


def test_skipping_ahead_is_allowed():
    s = make_session()
    s.close()
    assert s.state == "closed"


def test_stimulus_requires_receiving_state():
    s = make_session()
    with pytest.raises(InvalidState):
        s.record_stimulus("tone")
    s.begin_receiving()
    s.record_stimulus("tone")
    s.begin_finalizing()
    with pytest.raises(InvalidState):
        s.record_stimulus("tone")


def test_undo_revokes_latest_first():
    s = make_session()
    s.begin_receiving()
    a = s.record_stimulus("a", t_utc_us=100)
    b = s.record_stimulus("b", t_utc_us=200)
    assert s.undo_last() is b and b.revoked
    assert s.undo_last() is a and a.revoked
    assert s.undo_last() is None
    assert s.effective_events() == []


def test_effective_events_sorted_by_time():
    s = make_session()
    s.begin_receiving()
    s.record_stimulus("late", t_utc_us=900)
    s.record_stimulus("early", t_utc_us=100)
    assert [e.label for e in s.effective_events()] == ["early", "late"]


def test_intensity_range_checked():
    with pytest.raises(ValueError):
        StimulusEvent("x", 0, intensity=11)
    with pytest.raises(ValueError):
        StimulusEvent("x", 0, intensity=-1)
    assert StimulusEvent("x", 0, intensity=10).intensity == 10
    assert StimulusEvent("x", 0).intensity is None


# -- gap accounting -------------------------------------------------------------


def test_sequence_gap_counts_missing_packets():
    s = make_session()
    s.begin_receiving()
    s.note_packet(0, 160, 0, 39750)
    s.note_packet(1, 160, 40000, 79750)
    s.note_packet(3, 160, 120000, 159750)
    assert s.gaps == 1
    assert s.anomalies == 0
    assert s.gap_log[0]["expected"] == 2 and s.gap_log[0]["got"] == 3
    assert s.packets == 3 and s.samples == 480
    assert s.highest_seq == 3


def test_duplicate_sequence_is_an_anomaly_not_a_gap():
    s = make_session()
    s.begin_receiving()
    s.note_packet(0, 160, 0, 39750)
    s.note_packet(0, 160, 0, 39750)
    assert s.gaps == 0 and s.anomalies == 1


def test_empty_probe_packet_advances_sequence_without_samples():
    s = make_session()
    s.begin_receiving()
    s.note_packet(0, 0, None, None)
    s.note_packet(1, 160, 1000, 40750)
    assert s.gaps == 0 and s.samples == 160
    assert s.t_first_us == 1000


def test_save_toggle_tracks_windows():
    s = make_session()
    assert s.save_windows == [[None, None]]
    s.set_save(False)
    assert s.save_windows[0][1] is not None
    s.set_save(True)
    assert len(s.save_windows) == 2 and s.save_windows[1][1] is None
    s.set_save(True)  # no-op
    assert len(s.save_windows) == 2


# -- event alignment --------------------------------------------------------------


def test_align_event_exactly_on_a_sample():
    times = [0, 250, 500, 750]
    (a,) = align([StimulusEvent("x", 500)], times)
    assert a.aligned and a.sample_index == 2 and a.offset_us == 0


def test_align_event_between_samples_snaps_forward():
    times = [0, 250, 500, 750]
    (a,) = align([StimulusEvent("x", 260)], times)
    assert a.aligned and a.sample_index == 2 and a.offset_us == 240


def test_align_event_outside_span_is_unaligned():
    times = [1000, 1250, 1500]
    anns = align(
        [StimulusEvent("early", 900), StimulusEvent("late", 1501)], times
    )
    assert not anns[0].aligned and anns[0].sample_index is None
    assert not anns[1].aligned


def test_align_skips_revoked_events():
    times = [0, 250]
    ev = StimulusEvent("x", 100)
    ev.revoked = True
    assert align([ev, StimulusEvent("y", 100)], times)[0].event.label == "y"


def test_align_with_no_samples():
    assert align([StimulusEvent("x", 0)], [])[0].aligned is False


# -- segment store ------------------------------------------------------------------


def row(t, volts=0.0, ndev=1, nch=8):
    return (t, [0xC00000] * ndev, [volts] * nch)


def test_segment_samples_by_rate():
    assert segment_samples(4000) == 20
    assert segment_samples(2000) == 10
    assert segment_samples(1000) == 5
    assert segment_samples(500) == 2
    assert segment_samples(250) == 1
    assert segment_samples(100) == 1


def test_segments_fill_at_five_milliseconds(tmp_path):
    store = SegmentStore(str(tmp_path), 4000, 1, 8)
    store.append_samples([row(i * 250) for i in range(400)])  # 100 ms
    assert len(store.index) == 20
    assert all(seg["samples"] == 20 for seg in store.index)
    assert store.samples_written == 400
    assert store.verify() == []
    store.close()


def test_partial_segment_flushes_short(tmp_path):
    store = SegmentStore(str(tmp_path), 4000, 1, 8)
    store.append_samples([row(i * 250) for i in range(47)])
    assert len(store.index) == 2 and store.record_count == 47
    store.flush_partial()
    assert len(store.index) == 3
    assert store.index[-1]["samples"] == 7
    assert store.samples_written == 47
    assert store.verify() == []
    store.close()


def test_store_keeps_every_timestamp(tmp_path):
    store = SegmentStore(str(tmp_path), 500, 2, 16)
    store.append_samples([row(1000 + 2000 * i, ndev=2, nch=16) for i in range(5)])
    assert list(store.sample_times()) == [1000, 3000, 5000, 7000, 9000]
    store.close()


def test_disk_failure_raises_storage_full(tmp_path):
    store = SegmentStore(str(tmp_path), 4000, 1, 8)

    class Broken:
        def write(self, blob):
            raise OSError("disk full")

        def flush(self):
            pass

        def close(self):
            pass

    store._spill.close()
    store._spill = Broken()
    with pytest.raises(StorageFull):
        store.append_samples([row(i * 250) for i in range(20)])
    assert store.failed
    store.close()


# -- session container file ------------------------------------------------------------


def header_for(store, **extra):
    head = {
        "config": {
            "session_id": "s",
            "rate_hz": store.rate_hz,
            "device_count": store.device_count,
            "channels": store.channels,
            "gain": 24,
        }
    }
    head.update(extra)
    return head


def test_container_round_trip(tmp_path):
    store = SegmentStore(str(tmp_path), 4000, 2, 16)
    rows = [
        (i * 250, [0xC00000, 0xC00001], [float(i) * 1e-6 + c for c in range(16)])
        for i in range(50)
    ]
    store.append_samples(rows)
    store.flush_partial()
    path = str(tmp_path / "s.eegses")
    write_session_file(path, header_for(store, note="x"), store)
    store.close()

    header, cols = read_session_file(path)
    assert header["note"] == "x"
    assert cols["t"].tolist() == [i * 250 for i in range(50)]
    assert cols["status"].shape == (50, 2)
    assert int(cols["status"][7, 1]) == 0xC00001
    assert cols["ch"].shape == (50, 16)
    assert cols["ch"][3, 5] == float(3) * 1e-6 + 5


def test_container_is_deterministic(tmp_path):
    def build(name):
        store = SegmentStore(str(tmp_path / name), 1000, 1, 8)
        store.append_samples([row(i * 1000, volts=i * 1e-6) for i in range(23)])
        store.flush_partial()
        path = str(tmp_path / (name + ".eegses"))
        write_session_file(path, header_for(store), store)
        store.close()
        with open(path, "rb") as fh:
            return fh.read()

    assert build("a") == build("b")


def test_container_detects_corruption(tmp_path):
    store = SegmentStore(str(tmp_path), 4000, 1, 8)
    store.append_samples([row(i * 250, volts=1e-6) for i in range(40)])
    store.flush_partial()
    path = str(tmp_path / "s.eegses")
    write_session_file(path, header_for(store), store)
    store.close()

    with open(path, "rb") as fh:
        blob = bytearray(fh.read())
    read_session_file(path)  # intact file parses

    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0x01
    bad = tmp_path / "bad.eegses"
    bad.write_bytes(bytes(flipped))
    with pytest.raises(SessionFileError):
        read_session_file(str(bad))

    bad.write_bytes(b"NOTMAGIC" + bytes(blob[8:]))
    with pytest.raises(SessionFileError):
        read_session_file(str(bad))

    bad.write_bytes(bytes(blob[:-4]))
    with pytest.raises(SessionFileError):
        read_session_file(str(bad))


# -- service ------------------------------------------------------------------------


def make_service(tmp_path, **kw):
    args = dict(session_id="svc", rate_hz=4000, device_count=1, channels=8,
                gain=24, directory=str(tmp_path))
    args.update(kw)
    return RecorderService(**args).start()


def control(service, method, path, body=None):
    url = "http://%s:%d%s" % (service.control_host, service.control_port, path)
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(url, data=data, method=method)
    if data:
        req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, json.loads(resp.read().decode())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read().decode())


def run_engine_into(service, duration_s=1.0, **overrides):
    config = AcqConfig()
    config.session_id = "svc"
    config.rate_hz = 4000
    config.duration_s = duration_s
    config.seed = 11
    config.noise_rms_uv = 0.2
    config.start_time_us = 0
    config.set("source.1", "sine:freq=10,amp=30e-6")
    for key, value in overrides.items():
        setattr(config, key, value)
    engine = AcquisitionEngine(
        config,
        transport=TcpTransport((service.data_host, service.data_port)),
        mode="fast",
    )
    return engine.run()


def test_end_to_end_stream_store_and_control(tmp_path):
    service = make_service(tmp_path)
    try:
        status, body = control(service, "GET", "/status")
        assert status == 200 and body["state"] == "idle"

        # Wall-clock start so stimulus wall times land inside the stream span.
        report = run_engine_into(service, duration_s=4.0, start_time_us=None)
        deadline = time.monotonic() + 10
        while not service._engine_done.is_set() and time.monotonic() < deadline:
            time.sleep(0.01)

        status, body = control(service, "GET", "/status")
        assert body["state"] == "receiving"
        assert body["packets"] == report.packets
        assert body["samples"] == report.frames == 16000
        assert body["gaps"] == 0 and body["anomalies"] == 0

        status, hit = control(service, "POST", "/stimulate",
                              {"label": "tone", "intensity": 3})
        assert status == 200
        assert hit["event"]["label"] == "tone"
        assert hit["press_to_log_us"] >= 0

        status, miss = control(service, "POST", "/stimulate", {"label": "oops"})
        assert status == 200
        status, undone = control(service, "POST", "/undo")
        assert undone["revoked"]["label"] == "oops"

        status, final = control(service, "POST", "/stop")
        assert status == 200
        assert final["samples_stored"] == 16000
        assert final["gaps"] == 0
        assert final["stream_digest"] == report.digest
        assert final["storage_problems"] == []
        assert len(final["annotations"]) == 1
        ann = final["annotations"][0]
        assert ann["aligned"] is True
        assert 0 <= ann["offset_us"] < 250

        # Stored rows re-serialize to the exact transmitted stream.
        header, cols = read_session_file(final["path"])
        assert header["counters"]["samples_stored"] == 16000
        redigest = wire.StreamDigest()
        for i in range(cols["t"].shape[0]):
            redigest.update_row(
                wire.sample_text(
                    int(cols["t"][i]),
                    [int(x) for x in cols["status"][i]],
                    [float(x) for x in cols["ch"][i]],
                )
            )
        assert redigest.hexdigest() == report.digest
        assert header["holes"] == []
        assert len(header["events"]) == 2  # revoked event kept in the log
        assert len(header["annotations"]) == 1

        status, body = control(service, "GET", "/status")
        assert body["state"] == "closed"
        status, body = control(service, "POST", "/stimulate", {"label": "x"})
        assert status == 409
    finally:
        service.close()


def test_control_api_rejects_bad_requests(tmp_path):
    service = make_service(tmp_path)
    try:
        status, _ = control(service, "POST", "/save", {"enabled": "yes"})
        assert status == 400
        status, _ = control(service, "POST", "/stimulate", {"label": ""})
        assert status == 400
        status, _ = control(service, "GET", "/nope")
        assert status == 404
        status, body = control(service, "POST", "/undo")
        assert status == 200 and body["revoked"] is None
        status, _ = control(service, "POST", "/start")
        assert status == 200
        status, _ = control(service, "POST", "/start")
        assert status == 409
    finally:
        service.close()


def test_save_toggle_via_control_gates_storage(tmp_path):
    service = make_service(tmp_path, save_enabled=False)
    try:
        run_engine_into(service, duration_s=0.5)
        deadline = time.monotonic() + 10
        while not service._engine_done.is_set() and time.monotonic() < deadline:
            time.sleep(0.01)
        report = control(service, "POST", "/stop")[1]
        # 2000 frames make 12 full packets; the 80-frame tail never ships.
        assert report["samples_received"] == 1920
        assert report["samples_stored"] == 0
    finally:
        service.close()


def test_sse_stream_delivers_hello_and_batches(tmp_path):
    service = make_service(tmp_path)
    sock = socket.create_connection(
        (service.control_host, service.control_port), timeout=10
    )
    try:
        sock.sendall(
            b"GET /stream HTTP/1.1\r\nHost: x\r\nAccept: text/event-stream\r\n\r\n"
        )
        buf = b""
        deadline = time.monotonic() + 10

        def read_event(buf, name):
            marker = b"event: " + name + b"\ndata: "
            while time.monotonic() < deadline:
                start = buf.find(marker)
                if start != -1:
                    end = buf.find(b"\n\n", start)
                    if end != -1:
                        return buf, buf[start + len(marker) : end]
                buf += sock.recv(4096)
            raise AssertionError("no complete %r event" % name)

        buf, hello_line = read_event(buf, b"hello")
        hello = json.loads(hello_line)
        assert hello["stride"] == 2 and hello["points_per_second"] == 2000

        run_engine_into(service, duration_s=0.25)
        buf, batch_line = read_event(buf, b"batch")
        batch = json.loads(batch_line)
        assert len(batch["t"]) == 80  # 160-sample packet decimated by 2
        assert len(batch["ch"][0]) == 8
        assert batch["t"][1] - batch["t"][0] == 500
    finally:
        sock.close()
        service.close()


def test_slow_analyzer_drops_while_storage_keeps_everything(tmp_path):
    service = make_service(tmp_path)
    try:
        def slow(batch):
            time.sleep(0.05)

        handle = service.register_analyzer(slow, name="slow", maxlen=2)
        run_engine_into(service, duration_s=1.0)
        deadline = time.monotonic() + 10
        while not service._engine_done.is_set() and time.monotonic() < deadline:
            time.sleep(0.01)
        report = service.finalize()
        assert report["samples_stored"] == 4000  # storage queue never drops
        stats = handle.stats()
        assert stats["dropped_samples"] > 0
        assert stats["delivered_samples"] + stats["dropped_samples"] <= 4000
    finally:
        service.close()


def test_storage_failure_stops_saving_but_not_receiving(tmp_path):
    service = make_service(tmp_path)
    try:
        run_engine_into(service, duration_s=0.25)
        deadline = time.monotonic() + 10
        while not service._engine_done.is_set() and time.monotonic() < deadline:
            time.sleep(0.01)
        while service._storage_q.qsize() and time.monotonic() < deadline:
            time.sleep(0.01)
        stored_before = service.store.samples_written

        class Broken:
            def write(self, blob):
                raise OSError("disk full")

            def flush(self):
                pass

            def close(self):
                pass

        service.store._spill.close()
        service.store._spill = Broken()
        seeded = wire.DataPacket(
            "svc",
            service.session.highest_seq + 1,
            [wire.Sample(10_000_000 + i * 250, [0xC00000], [0.0] * 8)
             for i in range(40)],
        )
        service._ingest(seeded)
        deadline = time.monotonic() + 10
        while not service.storage_failed and time.monotonic() < deadline:
            time.sleep(0.01)
        assert service.storage_failed
        assert service.session.state == "receiving"
        assert not service.session.save_enabled
        with pytest.raises(InvalidState):
            service.set_save(True)

        report = service.finalize()
        # 960 streamed (6 full packets) plus the 40 injected after the fault.
        assert report["samples_received"] == 1000
        assert report["samples_stored"] == stored_before
        header, cols = read_session_file(report["path"])
        assert cols["t"].shape[0] == stored_before
    finally:
        service.close()


def test_two_engine_runs_same_seed_identical_digest(tmp_path):
    digests = []
    for name in ("a", "b"):
        service = make_service(tmp_path / name)
        try:
            run_engine_into(service, duration_s=0.5)
            deadline = time.monotonic() + 10
            while not service._engine_done.is_set() and time.monotonic() < deadline:
                time.sleep(0.01)
            digests.append(service.finalize()["stream_digest"])
        finally:
            service.close()
    assert digests[0] == digests[1]
