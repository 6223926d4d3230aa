"""Run statistics and the WP-vs-CP comparison report.

Both containers serialize to JSON (nested, stable key order) and CSV (one
row per object, frozen column set, nested values flattened with dots).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass, field

from .cache import CP, IFETCH, KINDS, LOAD, PREFETCH, STORE, LevelStats

LEVELS = ("l1i", "l1d", "l2", "llc")
SCHEMA_VERSION = 1
ROB_BUCKET = 32


class CompareError(ValueError):
    pass


def _zero_cache() -> dict:
    return {lvl: LevelStats().to_dict() for lvl in LEVELS}


@dataclass
class RunStats:
    schema: int = SCHEMA_VERSION
    mode: str = ""
    trace_hash: str = ""
    config_hash: str = ""
    cycles: int = 0
    retired_cp_instructions: int = 0
    fetched_instructions: dict = field(default_factory=lambda: {"cp": 0, "wp": 0})
    renamed_instructions: dict = field(default_factory=lambda: {"cp": 0, "wp": 0})
    squashed_instructions: int = 0
    decode_resteers: int = 0
    execute_resteers: int = 0
    no_segment_mispredicts: int = 0
    skipped_segments: int = 0
    wp_fetch_idle_cycles: int = 0
    rob_full_events: int = 0
    rob_occupancy_at_mispredict: dict = field(default_factory=dict)
    branch: dict = field(default_factory=lambda: {"predictions": 0, "mispredictions": 0, "mpki": 0.0})
    cache: dict = field(default_factory=_zero_cache)
    config: dict = field(default_factory=dict)

    @property
    def ipc(self) -> float:
        return self.retired_cp_instructions / self.cycles if self.cycles else 0.0

    @property
    def fetched_total(self) -> int:
        return self.fetched_instructions["cp"] + self.fetched_instructions["wp"]

    def rob_occupancy_mean(self) -> float:
        n = sum(self.rob_occupancy_at_mispredict.values())
        if not n:
            return 0.0
        s = sum((int(k) + ROB_BUCKET / 2) * v for k, v in self.rob_occupancy_at_mispredict.items())
        return s / n

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunStats":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown RunStats fields: {sorted(unknown)}")
        return cls(**d)


def rob_bucket(occupancy: int) -> str:
    return str(occupancy // ROB_BUCKET * ROB_BUCKET)


def pct_change(new: float, base: float):
    """100 * (new / base - 1); 0 when both are 0, None when only base is 0."""
    if base == 0:
        return 0.0 if new == 0 else None
    return 100.0 * (new / base - 1.0)


def pct_reduction(new: float, base: float):
    """100 * (1 - new / base), with the same zero conventions as pct_change."""
    if base == 0:
        return 0.0 if new == 0 else None
    return 100.0 * (1.0 - new / base)


def _cp_misses(c: dict, demand_only: bool) -> int:
    kinds = (IFETCH, LOAD, STORE) if demand_only else KINDS
    return sum(c[f"misses.{k}.{CP}"] for k in kinds)


@dataclass
class CompareReport:
    schema: int = SCHEMA_VERSION
    trace_hash: str = ""
    config_hash: str = ""
    ipc_wp: float = 0.0
    ipc_cp: float = 0.0
    ipc_speedup_pct: float = 0.0
    fetched_wp: int = 0
    fetched_cp: int = 0
    rel_instruction_increase_pct: float = 0.0
    mpki_wp: float = 0.0
    mpki_cp: float = 0.0
    rob_occupancy_at_mispredict_wp: float = 0.0
    rob_occupancy_at_mispredict_cp: float = 0.0
    rob_full_events_wp: int = 0
    rob_full_events_cp: int = 0
    cache: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CompareReport":
        return cls(**d)


def compare(wp: RunStats, cp: RunStats, check_modes: bool = True) -> CompareReport:
    """Derive the WP-vs-CP quantities from two runs of the same trace and config."""
    if wp.trace_hash != cp.trace_hash:
        raise CompareError("trace identity hashes differ")
    if wp.config_hash != cp.config_hash:
        raise CompareError("configurations differ apart from mode")
    if check_modes and (wp.mode, cp.mode) != ("wp", "cp"):
        raise CompareError(f"expected (wp, cp) runs, got ({wp.mode}, {cp.mode})")
    if not wp.cycles or not cp.cycles or not wp.fetched_total or not cp.fetched_total:
        raise CompareError("cannot compare empty runs")
    rep = CompareReport(trace_hash=wp.trace_hash, config_hash=wp.config_hash)
    rep.ipc_wp, rep.ipc_cp = wp.ipc, cp.ipc
    rep.ipc_speedup_pct = 100.0 * (wp.ipc / cp.ipc - 1.0)
    rep.fetched_wp, rep.fetched_cp = wp.fetched_total, cp.fetched_total
    rep.rel_instruction_increase_pct = 100.0 * (wp.fetched_total / cp.fetched_total - 1.0)
    rep.mpki_wp, rep.mpki_cp = wp.branch["mpki"], cp.branch["mpki"]
    rep.rob_occupancy_at_mispredict_wp = wp.rob_occupancy_mean()
    rep.rob_occupancy_at_mispredict_cp = cp.rob_occupancy_mean()
    rep.rob_full_events_wp, rep.rob_full_events_cp = wp.rob_full_events, cp.rob_full_events
    for lvl in LEVELS:
        w, c = wp.cache[lvl], cp.cache[lvl]
        wp_fills = w["wp_fills"]
        rep.cache[lvl] = {
            "hit_delta_pct": pct_change(w["hits"], c["hits"]),
            "miss_delta_pct": pct_change(w["misses"], c["misses"]),
            "demand_hit_delta_pct": pct_change(w["demand_hits"], c["demand_hits"]),
            "demand_miss_delta_pct": pct_change(w["demand_misses"], c["demand_misses"]),
            "cp_miss_reduction_pct": pct_reduction(_cp_misses(w, False), c["misses"]),
            "cp_demand_miss_reduction_pct": pct_reduction(_cp_misses(w, True), _cp_misses(c, True)),
            "useful_wp_fill_fraction": (w["useful_wp_fills"] / wp_fills) if wp_fills else 0.0,
            "prefetch_miss_delta_pct": pct_change(
                w[f"misses.{PREFETCH}.cp"] + w[f"misses.{PREFETCH}.wp"],
                c[f"misses.{PREFETCH}.cp"] + c[f"misses.{PREFETCH}.wp"]),
        }
    return rep


# -- serialization ------------------------------------------------------------

def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


# Fields whose key sets vary between runs go into CSV as one JSON cell.
_OPAQUE = {"rob_occupancy_at_mispredict", "config"}


def _csv_row(obj) -> dict:
    d = obj.to_dict()
    row = {}
    for k, v in d.items():
        if k in _OPAQUE:
            row[k] = json.dumps(v, sort_keys=True)
        elif isinstance(v, dict):
            row.update(_flatten(v, k + "."))
        else:
            row[k] = v
    return row


def csv_columns(kind: type) -> list[str]:
    return list(_csv_row(kind() if kind is RunStats else _empty_report()).keys())


def _empty_report() -> CompareReport:
    rep = CompareReport()
    for lvl in LEVELS:
        rep.cache[lvl] = {k: 0.0 for k in (
            "hit_delta_pct", "miss_delta_pct", "demand_hit_delta_pct", "demand_miss_delta_pct",
            "cp_miss_reduction_pct", "cp_demand_miss_reduction_pct", "useful_wp_fill_fraction",
            "prefetch_miss_delta_pct")}
    return rep


def emit(objs, fmt: str = "json") -> bytes:
    """Serialize one RunStats/CompareReport (JSON) or a list of them (JSON list or CSV)."""
    items = objs if isinstance(objs, (list, tuple)) else [objs]
    if fmt == "json":
        payload = items[0].to_dict() if not isinstance(objs, (list, tuple)) else [o.to_dict() for o in items]
        return (json.dumps(payload, indent=2) + "\n").encode()
    if fmt == "csv":
        if not items:
            return b""
        cols = csv_columns(type(items[0]))
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="raise")
        w.writeheader()
        for o in items:
            w.writerow(_csv_row(o))
        return buf.getvalue().encode()
    raise ValueError(f"unknown format {fmt!r}")


def _unflatten(row: dict, template: dict) -> dict:
    out = {}
    for k, v in template.items():
        if k in _OPAQUE:
            out[k] = json.loads(row[k])
        elif isinstance(v, dict):
            sub = {kk[len(k) + 1:]: vv for kk, vv in row.items() if kk.startswith(k + ".")}
            out[k] = _unflatten_nested(sub, v)
        else:
            out[k] = _typed(row[k], v)
    return out


def _unflatten_nested(flat: dict, template: dict) -> dict:
    out = {}
    for k, v in template.items():
        if isinstance(v, dict):
            sub = {kk[len(k) + 1:]: vv for kk, vv in flat.items() if kk.startswith(k + ".")}
            out[k] = _unflatten_nested(sub, v)
        else:
            out[k] = _typed(flat[k], v)
    return out


def _typed(s: str, like):
    if isinstance(like, bool):
        return s == "True"
    if isinstance(like, int):
        return int(s)
    if isinstance(like, float):
        return None if s == "" else float(s)
    return s


def load(data: bytes | str, fmt: str = "json"):
    """Inverse of ``emit``: returns a RunStats/CompareReport or a list of them."""
    text = data.decode() if isinstance(data, bytes) else data
    if fmt == "json":
        obj = json.loads(text)
        return [_from_dict(o) for o in obj] if isinstance(obj, list) else _from_dict(obj)
    if fmt == "csv":
        rows = list(csv.DictReader(io.StringIO(text)))
        out = []
        for row in rows:
            is_stats = "cycles" in row
            tmpl = RunStats().to_dict() if is_stats else _empty_report().to_dict()
            cls = RunStats if is_stats else CompareReport
            if is_stats:
                # cache counters are all ints
                tmpl["cache"] = _zero_cache()
            out.append(cls(**_unflatten(row, tmpl)))
        return out
    raise ValueError(f"unknown format {fmt!r}")


def _from_dict(d: dict):
    return RunStats.from_dict(d) if "cycles" in d else CompareReport.from_dict(d)
