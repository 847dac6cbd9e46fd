"""Length-prefixed JSON framing for the sample stream.

One frame on the wire is a 4-byte big-endian payload length followed by a
canonical UTF-8 JSON object:

    {"session_id":"...","seq":N,"samples":[{"t":...,"status":[...],"ch":[...]},...]}

Canonical means: no whitespace, keys in exactly that order, channel values
printed with "%.9g". Nine significant digits round-trip cleanly through
float64, so format -> parse -> format is the identity and both ends of a
connection can hash the same bytes. The decoder is tolerant of TCP sticking
(many frames per read) and breaking (one frame across many reads); the
output never depends on how the stream was chunked.

The full byte-level contract lives in docs/wire-format.md.
"""

import hashlib
import json
import math

MAX_PAYLOAD = 16 * 1024 * 1024  # sanity bound on a single frame
HEADER_BYTES = 4


class WireError(Exception):
    pass


class PacketTooLarge(WireError):
    pass


class CorruptHeader(WireError):
    """Declared frame length outside (0, MAX_PAYLOAD]; fatal for the
    connection."""


class MalformedJson(WireError):
    """Payload is not a valid packet object; fatal for the connection."""


def format_value(v):
    """Canonical text for one channel value."""
    v = float(v)
    if v == 0.0:
        return "0"  # normalize -0.0; JSON parsers disagree on its sign
    if math.isfinite(v):
        return "%.9g" % v
    raise ValueError("non-finite channel value: %r" % v)


def canonical_value(v):
    """The float64 a channel value becomes after one trip over the wire."""
    return float(format_value(v))


# One printf pass formats every channel of a sample at once. The result is
# byte-identical to joining format_value cells except for two rare cases:
# nan/inf cells (which spell out an "n" and must raise) and cells that BEGIN
# with "-0" (a lone "-0" is negative zero and needs its sign dropped). Any
# hit falls back to the careful per-value path; exponents like "e-05" do not
# trigger it because "-0" only counts at a cell start.
_ROW_FMT = {}


def _row_fmt(n):
    fmt = _ROW_FMT.get(n)
    if fmt is None:
        fmt = _ROW_FMT[n] = ",".join(["%.9g"] * n)
    return fmt


def _needs_care(body):
    return "n" in body or body.startswith("-0") or ",-0" in body


def _format_cells(ch):
    """Comma-joined canonical text of all channel values."""
    body = _row_fmt(len(ch)) % tuple(ch)
    if _needs_care(body):
        return ",".join([format_value(v) for v in ch])
    return body


def _canonical_list(values):
    """canonical_value over a sequence, in one formatting pass."""
    vals = [float(v) for v in values]
    if not vals:
        return vals
    body = _row_fmt(len(vals)) % tuple(vals)
    if _needs_care(body):
        return [canonical_value(v) for v in vals]
    return [float(c) for c in body.split(",")]


class Sample:
    """One conversion instant: timestamp (microseconds), per-device status
    words, per-channel volts. Channel values are canonicalized to wire
    precision on construction so round trips are exact."""

    __slots__ = ("t", "status", "ch")

    def __init__(self, t, status, ch):
        self.t = int(t)
        self.status = [int(s) for s in status]
        self.ch = _canonical_list(ch)

    def __eq__(self, other):
        return (
            isinstance(other, Sample)
            and self.t == other.t
            and self.status == other.status
            and self.ch == other.ch
        )

    def __repr__(self):
        return "Sample(t=%d, status=%r, ch=%r)" % (self.t, self.status, self.ch)


class DataPacket:
    """The wire unit: a session id, a sequence number and a batch of
    samples. Sequence numbers start at 0 and increment by 1 per packet on a
    connection; gap detection is the consumer's job."""

    __slots__ = ("session_id", "seq", "samples")

    def __init__(self, session_id, seq, samples):
        seq = int(seq)
        if seq < 0:
            raise ValueError("negative sequence number")
        self.session_id = str(session_id)
        self.seq = seq
        self.samples = list(samples)

    def __eq__(self, other):
        return (
            isinstance(other, DataPacket)
            and self.session_id == other.session_id
            and self.seq == other.seq
            and self.samples == other.samples
        )

    def __repr__(self):
        return "DataPacket(session_id=%r, seq=%d, samples=<%d>)" % (
            self.session_id,
            self.seq,
            len(self.samples),
        )


def sample_text(t, status, ch):
    """Canonical serialization of one sample; also the digest input row."""
    return '{"t":%d,"status":[%s],"ch":[%s]}' % (
        int(t),
        ",".join([str(int(s)) for s in status]),
        _format_cells(ch),
    )


def encode_packet_rows(session_id, seq, rows):
    """Frame pre-serialized sample rows (sample_text output). The engine's
    hot path; byte-identical to encode_packet on the same content."""
    payload = (
        '{"session_id":%s,"seq":%d,"samples":[%s]}'
        % (json.dumps(session_id, ensure_ascii=False), int(seq), ",".join(rows))
    ).encode("utf-8")
    if len(payload) > MAX_PAYLOAD:
        raise PacketTooLarge("payload is %d bytes" % len(payload))
    return len(payload).to_bytes(HEADER_BYTES, "big") + payload


def encode_packet(packet):
    """Serialize one DataPacket to its framed wire bytes."""
    return encode_packet_rows(
        packet.session_id,
        packet.seq,
        [sample_text(s.t, s.status, s.ch) for s in packet.samples],
    )


def _packet_from_obj(obj, offset):
    if not isinstance(obj, dict):
        raise MalformedJson("packet is not an object at byte offset %d" % offset)
    try:
        session_id = obj["session_id"]
        seq = obj["seq"]
        samples = obj["samples"]
    except KeyError as exc:
        raise MalformedJson(
            "packet missing %s at byte offset %d" % (exc, offset)
        ) from None
    if (
        not isinstance(session_id, str)
        or not isinstance(seq, int)
        or isinstance(seq, bool)
        or not isinstance(samples, list)
    ):
        raise MalformedJson("bad packet field types at byte offset %d" % offset)
    out = []
    for row in samples:
        if not isinstance(row, dict):
            raise MalformedJson("bad sample at byte offset %d" % offset)
        try:
            t, status, ch = row["t"], row["status"], row["ch"]
        except KeyError as exc:
            raise MalformedJson(
                "sample missing %s at byte offset %d" % (exc, offset)
            ) from None
        if (
            not isinstance(t, int)
            or not isinstance(status, list)
            or not isinstance(ch, list)
            or not all(isinstance(s, int) and not isinstance(s, bool) for s in status)
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in ch)
        ):
            raise MalformedJson("bad sample field types at byte offset %d" % offset)
        out.append(Sample(t, status, ch))
    try:
        packet = DataPacket(session_id, seq, out)
    except ValueError as exc:
        raise MalformedJson("%s at byte offset %d" % (exc, offset)) from None
    return packet


class DecoderState:
    """Incremental frame decoder for one connection.

    Feed raw chunks in arrival order; complete packets come out as soon as
    their last byte arrives. Holds at most one partial frame of residue.
    Any raised error is fatal: discard the state with the connection.
    """

    def __init__(self):
        self.residue = b""
        self.packets_decoded = 0
        self.bytes_consumed = 0  # bytes of completed frames, start of residue

    def feed(self, chunk):
        buf = self.residue + bytes(chunk)
        packets = []
        pos = 0
        while len(buf) - pos >= HEADER_BYTES:
            length = int.from_bytes(buf[pos : pos + HEADER_BYTES], "big")
            if not 0 < length <= MAX_PAYLOAD:
                raise CorruptHeader(
                    "frame length %d at byte offset %d"
                    % (length, self.bytes_consumed + pos)
                )
            if len(buf) - pos < HEADER_BYTES + length:
                break
            start = pos + HEADER_BYTES
            payload = buf[start : start + length]
            payload_offset = self.bytes_consumed + start
            try:
                obj = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise MalformedJson(
                    "%s at byte offset %d" % (exc, payload_offset)
                ) from None
            packets.append(_packet_from_obj(obj, payload_offset))
            pos = start + length
        self.residue = buf[pos:]
        self.bytes_consumed += pos
        self.packets_decoded += len(packets)
        return packets


def decode_stream(state, chunk):
    """Functional form of DecoderState.feed: returns (packets, state)."""
    return state.feed(chunk), state


class StreamDigest:
    """SHA-256 over the canonical serialization of every sample, one row
    plus newline per sample. Sender and receiver both maintain one; equal
    hex digests prove the sample stream survived bit for bit."""

    __slots__ = ("_hash", "samples_hashed")

    def __init__(self):
        self._hash = hashlib.sha256()
        self.samples_hashed = 0

    def update_row(self, text):
        self._hash.update(text.encode("utf-8"))
        self._hash.update(b"\n")
        self.samples_hashed += 1

    def update_sample(self, sample):
        self.update_row(sample_text(sample.t, sample.status, sample.ch))

    def update_packet(self, packet):
        for sample in packet.samples:
            self.update_sample(sample)

    def hexdigest(self):
        return self._hash.hexdigest()
