"""Trace file format: entry encoding, framing, decoding, verification.

A ``.cpf`` trace file holds one channel and consists of a header
followed by frames.  All integers are little-endian.

Header (14 bytes + channel name)::

    magic           4 bytes  b"CPF1"
    version         u16      1
    handler_kind    u8       HandlerKind value
    default_codec   u8       CodecId value
    block_capacity  u32
    name_len        u16      followed by name_len bytes of UTF-8

Frame (21-byte header + payload)::

    seq_no           u64     per-channel, consecutive from 0
    entry_count      u32
    codec_id         u8      codec actually applied to this payload
    uncompressed_len u32     always 12 * entry_count
    payload_len      u32
    payload          payload_len bytes

An entry is 12 bytes: u64 timestamp_ns then i32 tag (two's complement).
The channel id is implicit - one file per channel.

Files written by the per-entry-I/O handler contain raw 12-byte records
directly after the header, with no frame headers; the decoder treats
such a file as a single implicit frame sized by the file length.
Frames may appear on disk out of seq_no order (workers finish in any
order); :func:`decode_file` restores logging order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .codecs import CodecId, decompress
from .config import HandlerKind
from .errors import FormatError, IntegrityError, SequenceError

MAGIC = b"CPF1"
VERSION = 1
FILE_SUFFIX = ".cpf"

_HEADER = struct.Struct("<4sHBBIH")
_FRAME = struct.Struct("<QIBII")
_ENTRY = struct.Struct("<Qi")

ENTRY_SIZE = _ENTRY.size  # 12
FRAME_HEADER_SIZE = _FRAME.size  # 21
HEADER_BASE_SIZE = _HEADER.size  # 14

#: dtype of decoded entry arrays.
ENTRY_DTYPE = np.dtype([("timestamp_ns", "<u8"), ("tag", "<i4")])
assert ENTRY_DTYPE.itemsize == ENTRY_SIZE


class TimestampEntry(NamedTuple):
    """One logged event: monotonic nanoseconds and an opaque 32-bit tag."""

    timestamp_ns: int
    tag: int
    channel_id: int = 0


def encode_entry(entry: TimestampEntry) -> bytes:
    """Encode one entry as its 12-byte record (channel id is implicit)."""
    return _ENTRY.pack(entry.timestamp_ns, entry.tag)


def decode_entry(data: bytes) -> TimestampEntry:
    """Exact inverse of :func:`encode_entry` for a single 12-byte record."""
    if len(data) != ENTRY_SIZE:
        raise FormatError(f"entry record must be {ENTRY_SIZE} bytes, got {len(data)}")
    ts, tag = _ENTRY.unpack(data)
    return TimestampEntry(timestamp_ns=ts, tag=tag)


def encode_entries(timestamps, tags) -> bytes:
    """Bulk-encode parallel timestamp/tag sequences into 12-byte records.

    Accepts anything :func:`numpy.asarray` can consume.  This is the
    pure-Python counterpart of the native block encoder and serves as
    its independent oracle in the tests.
    """
    ts = np.asarray(timestamps, dtype=np.uint64)
    tg = np.asarray(tags, dtype=np.int32)
    if ts.shape != tg.shape:
        raise ValueError("timestamps and tags must have equal length")
    out = np.empty(len(ts), dtype=ENTRY_DTYPE)
    out["timestamp_ns"] = ts
    out["tag"] = tg
    return out.tobytes()


def decode_entries(payload: bytes) -> np.ndarray:
    """Decode consecutive 12-byte records into an ``ENTRY_DTYPE`` array."""
    if len(payload) % ENTRY_SIZE:
        raise FormatError(
            f"payload length {len(payload)} is not a multiple of {ENTRY_SIZE}"
        )
    return np.frombuffer(payload, dtype=ENTRY_DTYPE)


@dataclass(frozen=True)
class TraceFileHeader:
    version: int
    handler_kind: HandlerKind
    default_codec: CodecId
    block_capacity: int
    channel_name: str

    @property
    def size(self) -> int:
        return HEADER_BASE_SIZE + len(self.channel_name.encode("utf-8"))


def encode_header(
    handler_kind: HandlerKind,
    default_codec: CodecId,
    block_capacity: int,
    channel_name: str,
) -> bytes:
    name = channel_name.encode("utf-8")
    if len(name) > 0xFFFF:
        raise ValueError("channel name too long")
    return _HEADER.pack(
        MAGIC, VERSION, int(handler_kind), int(default_codec), block_capacity, len(name)
    ) + name


def parse_header(data: bytes) -> TraceFileHeader:
    if len(data) < HEADER_BASE_SIZE:
        raise FormatError("file too short for a trace header", offset=0)
    magic, version, kind, codec, capacity, name_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    try:
        kind = HandlerKind(kind)
    except ValueError:
        raise FormatError(f"unknown handler kind byte {kind}", offset=6) from None
    try:
        codec = CodecId(codec)
    except ValueError:
        raise FormatError(f"unknown codec id byte {codec}", offset=7) from None
    if len(data) < HEADER_BASE_SIZE + name_len:
        raise FormatError("file truncated inside the channel name", offset=HEADER_BASE_SIZE)
    name = data[HEADER_BASE_SIZE : HEADER_BASE_SIZE + name_len].decode("utf-8")
    return TraceFileHeader(
        version=version,
        handler_kind=kind,
        default_codec=codec,
        block_capacity=capacity,
        channel_name=name,
    )


def encode_frame_header(
    seq_no: int, entry_count: int, codec_id: CodecId, uncompressed_len: int, payload_len: int
) -> bytes:
    return _FRAME.pack(seq_no, entry_count, int(codec_id), uncompressed_len, payload_len)


def read_header(path: str | Path) -> TraceFileHeader:
    """Parse just the header of a trace file."""
    with open(path, "rb") as f:
        head = f.read(HEADER_BASE_SIZE + 0xFFFF)
    return parse_header(head)


@dataclass
class FileReport:
    """Decoder accounting for one trace file."""

    path: Path
    channel_name: str
    handler_kind: HandlerKind
    default_codec: CodecId
    block_capacity: int
    frame_count: int
    entry_count: int
    raw_payload_bytes: int
    disk_bytes: int
    seq_complete: bool


def decode_file(path: str | Path) -> tuple[np.ndarray, FileReport]:
    """Decode a trace file into entries in original logging order.

    Returns an ``ENTRY_DTYPE`` array plus a :class:`FileReport`.  Frames
    are decompressed, validated, and reordered by seq_no.  Raises
    :class:`FormatError` (or a subclass) with a byte offset on any
    structural problem: bad magic or version, truncation, a corrupt
    payload, or a seq_no gap or duplicate.
    """
    path = Path(path)
    data = path.read_bytes()
    header = parse_header(data)
    pos = header.size
    disk_bytes = len(data)

    if header.handler_kind == HandlerKind.DIRECT_ID:
        # raw records after the header form a single implicit frame
        payload = data[pos:]
        if len(payload) % ENTRY_SIZE:
            raise FormatError(
                f"direct trace has {len(payload) % ENTRY_SIZE} trailing bytes "
                f"(not a whole {ENTRY_SIZE}-byte record)",
                offset=pos + len(payload) - (len(payload) % ENTRY_SIZE),
            )
        entries = np.frombuffer(payload, dtype=ENTRY_DTYPE)
        report = FileReport(
            path=path,
            channel_name=header.channel_name,
            handler_kind=header.handler_kind,
            default_codec=header.default_codec,
            block_capacity=header.block_capacity,
            frame_count=1 if len(entries) else 0,
            entry_count=len(entries),
            raw_payload_bytes=len(payload),
            disk_bytes=disk_bytes,
            seq_complete=True,
        )
        return entries.copy(), report

    frames: list[tuple[int, np.ndarray]] = []
    offsets: dict[int, int] = {}
    raw_bytes = 0
    while pos < len(data):
        frame_offset = pos
        if pos + FRAME_HEADER_SIZE > len(data):
            raise FormatError("file truncated inside a frame header", offset=frame_offset)
        seq, count, codec_byte, raw_len, payload_len = _FRAME.unpack_from(data, pos)
        pos += FRAME_HEADER_SIZE
        try:
            codec = CodecId(codec_byte)
        except ValueError:
            raise FormatError(
                f"unknown codec id byte {codec_byte}", offset=frame_offset + 12
            ) from None
        if raw_len != count * ENTRY_SIZE:
            raise FormatError(
                f"frame seq {seq} declares {count} entries but {raw_len} raw bytes",
                offset=frame_offset,
            )
        if pos + payload_len > len(data):
            raise FormatError(
                f"file truncated inside frame seq {seq} payload", offset=pos
            )
        payload = data[pos : pos + payload_len]
        pos += payload_len
        try:
            raw = decompress(codec, payload, raw_len)
        except IntegrityError as exc:
            raise IntegrityError(
                f"frame seq {seq}: {exc.args[0]}", offset=frame_offset
            ) from None
        if seq in offsets:
            raise SequenceError(f"duplicate frame seq {seq}", offset=frame_offset)
        offsets[seq] = frame_offset
        frames.append((seq, decode_entries(raw)))
        raw_bytes += raw_len

    if frames:
        seqs = sorted(offsets)
        if seqs[0] != 0 or seqs[-1] != len(seqs) - 1:
            missing = sorted(set(range(seqs[-1] + 1)) - set(seqs))
            raise SequenceError(
                f"missing frame seq {missing[:10]}", offset=disk_bytes
            )
    frames.sort(key=lambda item: item[0])
    if frames:
        entries = np.concatenate([arr for _, arr in frames])
    else:
        entries = np.empty(0, dtype=ENTRY_DTYPE)

    report = FileReport(
        path=path,
        channel_name=header.channel_name,
        handler_kind=header.handler_kind,
        default_codec=header.default_codec,
        block_capacity=header.block_capacity,
        frame_count=len(frames),
        entry_count=len(entries),
        raw_payload_bytes=raw_bytes,
        disk_bytes=disk_bytes,
        seq_complete=True,
    )
    return entries, report


def iter_entries(path: str | Path) -> Iterator[TimestampEntry]:
    """Yield decoded entries one at a time (convenience wrapper)."""
    entries, _ = decode_file(path)
    for ts, tag in entries:
        yield TimestampEntry(timestamp_ns=int(ts), tag=int(tag))


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    path: Path
    checks: list[CheckResult]
    entry_count: int = 0

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def render(self) -> str:
        lines = [f"verify {self.path}"]
        for c in self.checks:
            status = "ok  " if c.passed else "FAIL"
            detail = f"  {c.detail}" if c.detail else ""
            lines.append(f"  {status} {c.name}{detail}")
        lines.append(
            f"  {'ok  ' if self.ok else 'FAIL'} overall ({self.entry_count} entries)"
        )
        return "\n".join(lines)


def verify_file(path: str | Path) -> VerificationReport:
    """Run the full integrity battery on one trace file.

    Checks, in order: header magic/version, frame structure and payload
    integrity, seq_no completeness, and timestamp monotonicity over the
    decoded order.
    """
    path = Path(path)
    checks: list[CheckResult] = []

    try:
        read_header(path)
        checks.append(CheckResult("header", True))
    except (FormatError, OSError) as exc:
        checks.append(CheckResult("header", False, str(exc)))
        return VerificationReport(path=path, checks=checks)

    try:
        entries, report = decode_file(path)
    except SequenceError as exc:
        checks.append(CheckResult("frames", True))
        checks.append(CheckResult("seq_completeness", False, str(exc)))
        return VerificationReport(path=path, checks=checks)
    except FormatError as exc:  # includes IntegrityError
        checks.append(CheckResult("frames", False, str(exc)))
        return VerificationReport(path=path, checks=checks)

    checks.append(CheckResult("frames", True, f"{report.frame_count} frames"))
    checks.append(CheckResult("seq_completeness", True))

    ts = entries["timestamp_ns"]
    if len(ts) > 1 and not bool(np.all(ts[1:] >= ts[:-1])):
        bad = int(np.argmin(ts[1:] >= ts[:-1]))
        checks.append(
            CheckResult(
                "timestamp_monotonicity",
                False,
                f"timestamp decreases at entry {bad + 1}",
            )
        )
    else:
        checks.append(CheckResult("timestamp_monotonicity", True))

    return VerificationReport(path=path, checks=checks, entry_count=len(entries))
