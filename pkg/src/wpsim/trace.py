"""Wrong-path annotated trace format.

A trace file is a 32-byte header followed by fixed 64-byte little-endian
records.  Wrong-path (WP) records form flat segments that directly follow
the correct-path record whose mis-speculation spawned them (the trigger).

Header:  magic "WPT1" | u32 version | u64 record_count | u32 flags | 12 x 0
Record:  u64 pc | u64 target | u8 op_class | u8 flags | 4 x u8 src |
         2 x u8 dst | u64 mem_addr | u8 mem_size_log2 | 31 x 0
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import BinaryIO, Iterable, Iterator, NamedTuple

MAGIC = b"WPT1"
VERSION = 1
HEADER_SIZE = 32
RECORD_SIZE = 64
NO_REG = 255

HEADER_STRUCT = struct.Struct("<4sIQI12s")
RECORD_STRUCT = struct.Struct("<QQBB4B2BQB31x")
assert HEADER_STRUCT.size == HEADER_SIZE and RECORD_STRUCT.size == RECORD_SIZE

HDR_HAS_WP = 0x1

F_TAKEN = 0x1
F_WRONG_PATH = 0x2
F_TRIGGER = 0x4
F_TRIGGER_LS = 0x8
F_RESERVED = 0xF0

_U64 = (1 << 64) - 1


class OpClass(IntEnum):
    ALU = 0
    LOAD = 1
    STORE = 2
    COND_BRANCH = 3
    UNCOND_DIRECT = 4
    UNCOND_INDIRECT = 5
    CALL_DIRECT = 6
    CALL_INDIRECT = 7
    RETURN = 8
    LONG_ALU = 9


BRANCH_OPS = frozenset({3, 4, 5, 6, 7, 8})
MEM_OPS = frozenset({1, 2})
DIRECT_UNCOND_OPS = frozenset({4, 6})
INDIRECT_OPS = frozenset({5, 7})
CALL_OPS = frozenset({6, 7})


class TriggerKind(IntEnum):
    BRANCH_MISPREDICT = 0
    LS_DISAMBIGUATION = 1


class TraceError(Exception):
    """Malformed trace input, or a record that cannot be encoded."""

    def __init__(self, message: str, ordinal: int | None = None):
        self.ordinal = ordinal
        if ordinal is not None:
            message = f"record {ordinal}: {message}"
        super().__init__(message)


class TraceRecord(NamedTuple):
    pc: int
    target: int
    op_class: int
    flags: int = 0
    src_regs: tuple = (NO_REG,) * 4
    dst_regs: tuple = (NO_REG,) * 2
    mem_addr: int = 0
    mem_size_log2: int = 0

    @property
    def taken(self) -> bool:
        return bool(self.flags & F_TAKEN)

    @property
    def wrong_path(self) -> bool:
        return bool(self.flags & F_WRONG_PATH)

    @property
    def trigger(self) -> bool:
        return bool(self.flags & F_TRIGGER)

    @property
    def trigger_kind(self) -> TriggerKind:
        return TriggerKind((self.flags & F_TRIGGER_LS) >> 3)

    @property
    def is_branch(self) -> bool:
        return self.op_class in BRANCH_OPS

    def pack(self) -> bytes:
        return RECORD_STRUCT.pack(self.pc, self.target, self.op_class, self.flags,
                                  *self.src_regs, *self.dst_regs,
                                  self.mem_addr, self.mem_size_log2)

    @classmethod
    def unpack(cls, buf: bytes) -> "TraceRecord":
        return _from_fields(RECORD_STRUCT.unpack(buf))


def _from_fields(f: tuple) -> TraceRecord:
    return TraceRecord(f[0], f[1], f[2], f[3], f[4:8], f[8:10], f[10], f[11])


@dataclass
class TraceHeader:
    record_count: int = 0
    flags: int = 0
    magic: bytes = MAGIC
    version: int = VERSION

    @property
    def contains_wp_segments(self) -> bool:
        return bool(self.flags & HDR_HAS_WP)

    def pack(self) -> bytes:
        return HEADER_STRUCT.pack(self.magic, self.version, self.record_count,
                                  self.flags, bytes(12))


@dataclass
class WpSegment:
    trigger_index: int
    trigger_kind: TriggerKind
    records: list = field(default_factory=list)


# -- record rules ------------------------------------------------------------
# Each rule id appears in validation output and in encode errors.

def record_violations(rec: TraceRecord) -> list[tuple[str, str]]:
    """Per-record invariant violations as (rule_id, message) pairs."""
    out = []
    op = rec.op_class
    if not 0 <= op <= 9:
        out.append(("op-class-range", f"op_class {op} outside 0..9"))
    if rec.flags & F_RESERVED:
        out.append(("reserved-flag-bits", f"reserved flag bits set: {rec.flags:#04x}"))
    if op in MEM_OPS and rec.mem_addr == 0:
        out.append(("mem-op-flag-mismatch", "memory op with mem_addr = 0"))
    if op not in MEM_OPS and rec.mem_addr != 0:
        out.append(("mem-op-flag-mismatch", "non-memory op with mem_addr != 0"))
    if rec.flags & F_TRIGGER and rec.flags & F_WRONG_PATH:
        out.append(("nested-mis-speculation", "wrong-path record carries the trigger flag"))
    if op in DIRECT_UNCOND_OPS and not rec.flags & F_TAKEN:
        out.append(("direct-not-taken", "unconditional direct branch not marked taken"))
    if rec.flags & F_TRIGGER_LS and not rec.flags & F_TRIGGER:
        out.append(("trigger-kind-without-trigger", "trigger kind bit set without trigger flag"))
    if len(rec.src_regs) != 4 or len(rec.dst_regs) != 2:
        out.append(("register-arity", "expected 4 source and 2 destination registers"))
    return out


def _check_encodable(rec: TraceRecord, ordinal: int) -> None:
    bad = record_violations(rec)
    if bad:
        raise TraceError(f"{bad[0][0]}: {bad[0][1]}", ordinal)
    for name in ("pc", "target", "mem_addr"):
        v = getattr(rec, name)
        if not 0 <= v <= _U64:
            raise TraceError(f"{name} outside u64 range", ordinal)
    for r in (*rec.src_regs, *rec.dst_regs, rec.mem_size_log2):
        if not 0 <= r <= 255:
            raise TraceError("8-bit field out of range", ordinal)


# -- encode / decode ------------------------------------------------------------

def encode_records(records: Iterable[TraceRecord]) -> tuple[bytes, int, bool]:
    """Pack records into bytes. Returns (payload, count, has_wp)."""
    chunks = []
    pack = RECORD_STRUCT.pack
    has_wp = False
    n = 0
    for n, rec in enumerate(records, 1):
        _check_encodable(rec, n - 1)
        if rec.flags & F_WRONG_PATH:
            has_wp = True
        chunks.append(pack(rec.pc, rec.target, rec.op_class, rec.flags,
                           *rec.src_regs, *rec.dst_regs, rec.mem_addr, rec.mem_size_log2))
    return b"".join(chunks), n, has_wp


def write_trace(header: TraceHeader, records: Iterable[TraceRecord], sink: BinaryIO) -> int:
    """Write header + records to a binary sink and return the record count.

    ``record_count`` and the has-WP flag bit are computed from the records;
    ``header`` is updated in place to match what was written.
    """
    payload, n, has_wp = encode_records(records)
    header.record_count = n
    header.flags = (header.flags & ~HDR_HAS_WP) | (HDR_HAS_WP if has_wp else 0)
    try:
        sink.write(header.pack())
        sink.write(payload)
    except OSError as exc:
        raise TraceError(f"sink write failed: {exc}") from exc
    return n


def encode_trace(records: Iterable[TraceRecord], flags: int = 0) -> bytes:
    payload, n, has_wp = encode_records(records)
    hdr = TraceHeader(record_count=n, flags=(flags & ~HDR_HAS_WP) | (HDR_HAS_WP if has_wp else 0))
    return hdr.pack() + payload


def _parse_header(buf: bytes) -> TraceHeader:
    if len(buf) < HEADER_SIZE:
        raise TraceError(f"truncated header ({len(buf)} of {HEADER_SIZE} bytes)")
    magic, version, count, flags, reserved = HEADER_STRUCT.unpack(buf[:HEADER_SIZE])
    if magic != MAGIC:
        raise TraceError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TraceError(f"unsupported version {version}")
    if flags & ~HDR_HAS_WP:
        raise TraceError(f"reserved header flag bits set: {flags:#x}")
    if reserved != bytes(12):
        raise TraceError("nonzero reserved header bytes")
    return TraceHeader(record_count=count, flags=flags)


class TraceReader:
    """Streaming decoder. Iterating yields TraceRecord in file order."""

    CHUNK_RECORDS = 8192

    def __init__(self, source: BinaryIO):
        self._src = source
        self.header = _parse_header(source.read(HEADER_SIZE))

    def __iter__(self) -> Iterator[TraceRecord]:
        expected = self.header.record_count
        ordinal = 0
        unpack = RECORD_STRUCT.iter_unpack
        while True:
            want = min(self.CHUNK_RECORDS, expected - ordinal)
            buf = self._src.read(want * RECORD_SIZE) if want > 0 else b""
            whole = len(buf) // RECORD_SIZE
            for f in unpack(buf[:whole * RECORD_SIZE]):
                if f[3] & F_RESERVED:
                    raise TraceError("nonzero reserved flag bits", ordinal)
                yield TraceRecord(f[0], f[1], f[2], f[3], f[4:8], f[8:10], f[10], f[11])
                ordinal += 1
            if len(buf) % RECORD_SIZE:
                raise TraceError("truncated record", ordinal)
            if ordinal == expected:
                break
            if whole < want:
                raise TraceError(f"truncated trace: header declares {expected} records", ordinal)
        if self._src.read(1):
            raise TraceError(f"trailing bytes after {expected} records")


def read_trace(source: BinaryIO) -> tuple[TraceHeader, list[TraceRecord]]:
    reader = TraceReader(source)
    return reader.header, list(reader)


def decode_trace(data: bytes) -> tuple[TraceHeader, list[TraceRecord]]:
    import io
    return read_trace(io.BytesIO(data))


def load_trace(path) -> tuple[TraceHeader, list[TraceRecord], str]:
    """Read a trace file; also returns the sha256 of its bytes."""
    with open(path, "rb") as fh:
        data = fh.read()
    header, records = decode_trace(data)
    return header, records, hashlib.sha256(data).hexdigest()


def save_trace(path, records: Iterable[TraceRecord]) -> str:
    data = encode_trace(records)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def trace_digest(records: Iterable[TraceRecord]) -> str:
    return hashlib.sha256(encode_trace(records)).hexdigest()


# -- validation -----------------------------------------------------------------

@dataclass
class Violation:
    ordinal: int
    rule: str
    message: str

    def to_json(self) -> str:
        return json.dumps({"ordinal": self.ordinal, "rule": self.rule, "message": self.message})


@dataclass
class ValidationReport:
    records: int = 0
    cp_records: int = 0
    wp_records: int = 0
    segments_branch: int = 0
    segments_ls: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def segments(self) -> int:
        return self.segments_branch + self.segments_ls

    def summary(self) -> dict:
        return {
            "records": self.records,
            "cp_records": self.cp_records,
            "wp_records": self.wp_records,
            "segments": {"branch-mispredict": self.segments_branch,
                         "ls-disambiguation": self.segments_ls},
            "violations": len(self.violations),
        }

    def to_jsonl(self) -> str:
        return "".join(v.to_json() + "\n" for v in self.violations)


def check_records(records: Iterable[TraceRecord], header: TraceHeader | None = None) -> ValidationReport:
    """Check every record and segment invariant over a record stream."""
    rep = ValidationReport()
    vio = rep.violations
    # state: None = on CP; otherwise ordinal of the open trigger
    open_trigger: int | None = None
    open_kind = 0
    seg_len = 0
    prev_wp = False
    i = -1
    for i, rec in enumerate(records):
        for rule, msg in record_violations(rec):
            vio.append(Violation(i, rule, msg))
        wp = bool(rec.flags & F_WRONG_PATH)
        if wp:
            rep.wp_records += 1
            if open_trigger is None and not prev_wp:
                vio.append(Violation(i, "orphan-wp-record", "wrong-path record without a preceding trigger"))
            seg_len += 1
        else:
            rep.cp_records += 1
            if open_trigger is not None:
                if seg_len == 0:
                    vio.append(Violation(open_trigger, "empty-wp-segment", "empty WP segment after trigger"))
                elif open_kind:
                    rep.segments_ls += 1
                else:
                    rep.segments_branch += 1
            open_trigger = None
            seg_len = 0
            if rec.flags & F_TRIGGER:
                open_trigger = i
                open_kind = (rec.flags & F_TRIGGER_LS) >> 3
        prev_wp = wp
    rep.records = i + 1
    if open_trigger is not None:
        if seg_len == 0:
            vio.append(Violation(open_trigger, "empty-wp-segment", "empty WP segment after trigger"))
        else:
            # segment runs to end of file: it has no correct-path successor
            vio.append(Violation(open_trigger, "unterminated-wp-segment",
                                 "WP segment not followed by a correct-path record"))
    if header is not None:
        if header.record_count != rep.records:
            vio.append(Violation(-1, "record-count-mismatch",
                                 f"header declares {header.record_count}, found {rep.records}"))
        if header.contains_wp_segments != (rep.wp_records > 0):
            vio.append(Violation(-1, "header-wp-flag-mismatch",
                                 "contains_wp_segments flag disagrees with record content"))
    return rep


def validate_trace(source: BinaryIO) -> ValidationReport:
    """Validate a trace byte stream. Decode failures become violations."""
    try:
        reader = TraceReader(source)
    except TraceError as exc:
        rep = ValidationReport()
        rep.violations.append(Violation(-1, "bad-header", str(exc)))
        return rep
    collected: list[TraceRecord] = []
    decode_error = None
    try:
        for rec in reader:
            collected.append(rec)
    except TraceError as exc:
        decode_error = exc
    if decode_error is not None:
        rep = check_records(collected)
        rep.violations.append(Violation(decode_error.ordinal if decode_error.ordinal is not None else -1,
                                        "decode-error", str(decode_error)))
        return rep
    return check_records(collected, reader.header)


def segment_view(records: Iterable[TraceRecord]) -> tuple[list[TraceRecord], dict[int, WpSegment]]:
    """Split a record stream into its CP stream and trigger-index -> segment map."""
    recs = records if isinstance(records, list) else list(records)
    rep = check_records(recs)
    if not rep.ok:
        v = rep.violations[0]
        raise TraceError(f"{v.rule}: {v.message}", v.ordinal)
    cp: list[TraceRecord] = []
    segs: dict[int, WpSegment] = {}
    current: WpSegment | None = None
    for rec in recs:
        if rec.flags & F_WRONG_PATH:
            current.records.append(rec)
            continue
        idx = len(cp)
        cp.append(rec)
        if rec.flags & F_TRIGGER:
            current = WpSegment(idx, TriggerKind((rec.flags & F_TRIGGER_LS) >> 3))
            segs[idx] = current
        else:
            current = None
    return cp, segs


def reinsert(cp: list[TraceRecord], segs: dict[int, WpSegment]) -> list[TraceRecord]:
    """Inverse of segment_view."""
    out = []
    for i, rec in enumerate(cp):
        out.append(rec)
        seg = segs.get(i)
        if seg is not None:
            out.extend(seg.records)
    return out
