"""Segment store and the finalized session container file.

During a run, samples append to one spill file as fixed-size row records,
grouped into 5 ms segments tracked by an in-memory index (one spill plus an
index, not thousands of tiny files). Finalize turns the spill into the
session container:

    magic "EEGSES01"
    u32 LE header length, then that many bytes of JSON (config, counters,
        events, annotations, holes, save windows, segment summary)
    column blocks, little-endian, n records each:
        t       n x i64   microsecond timestamps
        status  n x u32 x device_count
        ch      n x f64 x channels
    trailer: u64 LE record count, u32 LE CRC-32 over the three column
        blocks, magic "END0"

The header JSON is serialized with sorted keys so identical content gives a
byte-identical file.
"""

import json
import os
import struct
import zlib
from array import array

import numpy as np

MAGIC = b"EEGSES01"
TRAILER_MAGIC = b"END0"
TRAILER = struct.Struct("<QI4s")
SEGMENT_SECONDS = 0.005
FILE_SUFFIX = ".eegses"


class StorageFull(Exception):
    """Disk write failed; saving stops, receiving continues."""


class SessionFileError(Exception):
    pass


def segment_samples(rate_hz):
    """Samples per 5 ms segment; lower rates floor to at least one sample."""
    return max(1, int(rate_hz) // 200)


def row_dtype(device_count, channels):
    return np.dtype(
        [("t", "<i8"), ("status", "<u4", (device_count,)), ("ch", "<f8", (channels,))]
    )


class SegmentStore:
    """Append-only spill of row records plus the segment index."""

    def __init__(self, directory, rate_hz, device_count, channels):
        os.makedirs(directory, exist_ok=True)
        self.directory = directory
        self.rate_hz = rate_hz
        self.device_count = device_count
        self.channels = channels
        self.seg_n = segment_samples(rate_hz)
        self.rec = struct.Struct("<q%dI%dd" % (device_count, channels))
        self.spill_path = os.path.join(directory, "spill.bin")
        self._spill = open(self.spill_path, "w+b")
        self._pending = []
        self._times = array("q")
        self.index = []  # {"index","first_sample","samples","offset","bytes"}
        self.samples_written = 0
        self.bytes_written = 0
        self.failed = False

    @property
    def record_count(self):
        return self.samples_written + len(self._pending)

    def sample_times(self):
        """Timestamps of every appended sample (pending ones included)."""
        return self._times

    def append_samples(self, rows):
        """Buffer (t, status, ch) rows; complete segments go to disk."""
        pack = self.rec.pack
        for t, status, ch in rows:
            self._pending.append(pack(t, *status, *ch))
            self._times.append(t)
        while len(self._pending) >= self.seg_n:
            self._write_segment(self.seg_n)

    def flush_partial(self):
        """Write whatever remains as one short final segment."""
        if self._pending:
            self._write_segment(len(self._pending))
        self._spill.flush()

    def _write_segment(self, k):
        blob = b"".join(self._pending[:k])
        try:
            self._spill.write(blob)
        except OSError as exc:
            self.failed = True
            raise StorageFull(str(exc)) from None
        self.index.append(
            {
                "index": len(self.index),
                "first_sample": self.samples_written,
                "samples": k,
                "offset": self.bytes_written,
                "bytes": len(blob),
            }
        )
        del self._pending[:k]
        self.samples_written += k
        self.bytes_written += len(blob)

    def verify(self):
        """Index self-consistency; a hole here means store corruption."""
        problems = []
        expect_sample = 0
        expect_offset = 0
        for seg in self.index:
            if seg["first_sample"] != expect_sample or seg["offset"] != expect_offset:
                problems.append("segment %d is discontiguous" % seg["index"])
            expect_sample = seg["first_sample"] + seg["samples"]
            expect_offset = seg["offset"] + seg["bytes"]
        if expect_sample != self.samples_written:
            problems.append(
                "index covers %d samples, store wrote %d"
                % (expect_sample, self.samples_written)
            )
        return problems

    def iter_raw(self, chunk_records=8192):
        """Spill contents in whole-record chunks, in order."""
        self._spill.flush()
        size = self.rec.size
        with open(self.spill_path, "rb") as fh:
            remaining = self.samples_written
            while remaining:
                n = min(chunk_records, remaining)
                blob = fh.read(n * size)
                if len(blob) != n * size:
                    raise SessionFileError("spill truncated")
                yield blob, n
                remaining -= n

    def close(self):
        self._spill.close()


def write_session_file(path, header, store):
    """Assemble the container from a flushed SegmentStore."""
    dtype = row_dtype(store.device_count, store.channels)
    header_blob = json.dumps(
        header, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    crc = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_blob)))
        fh.write(header_blob)
        for field in ("t", "status", "ch"):
            for blob, _ in store.iter_raw():
                rows = np.frombuffer(blob, dtype=dtype)
                column = np.ascontiguousarray(rows[field]).tobytes()
                crc = zlib.crc32(column, crc)
                fh.write(column)
        fh.write(TRAILER.pack(store.samples_written, crc, TRAILER_MAGIC))
    return path


def read_session_file(path):
    """Parse and verify a container; returns (header, columns dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise SessionFileError("bad magic")
    pos = len(MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    header = json.loads(blob[pos : pos + header_len].decode("utf-8"))
    pos += header_len
    if len(blob) < pos + TRAILER.size:
        raise SessionFileError("missing trailer")
    count, crc_stored, magic = TRAILER.unpack_from(blob, len(blob) - TRAILER.size)
    if magic != TRAILER_MAGIC:
        raise SessionFileError("bad trailer magic")
    ndev = header["config"]["device_count"]
    nch = header["config"]["channels"]
    t_bytes = count * 8
    s_bytes = count * 4 * ndev
    c_bytes = count * 8 * nch
    data = blob[pos : len(blob) - TRAILER.size]
    if len(data) != t_bytes + s_bytes + c_bytes:
        raise SessionFileError(
            "data block is %d bytes, trailer count %d implies %d"
            % (len(data), count, t_bytes + s_bytes + c_bytes)
        )
    if zlib.crc32(data) != crc_stored:
        raise SessionFileError("CRC mismatch")
    t = np.frombuffer(data[:t_bytes], dtype="<i8")
    status = np.frombuffer(data[t_bytes : t_bytes + s_bytes], dtype="<u4").reshape(
        count, ndev
    )
    ch = np.frombuffer(data[t_bytes + s_bytes :], dtype="<f8").reshape(count, nch)
    return header, {"t": t, "status": status, "ch": ch}
