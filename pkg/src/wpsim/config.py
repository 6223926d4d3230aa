"""Simulator configuration and the flat ``section.key = value`` file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .bpu import BpuConfig
from .cache import CacheHierarchy, CacheLevelConfig, default_level_configs

CP_MODE, WP_MODE = "cp", "wp"


class ConfigError(ValueError):
    pass


def _level(i: int):
    return field(default_factory=lambda: default_level_configs()[i])


@dataclass
class SimConfig:
    mode: str = WP_MODE
    rob_entries: int = 512
    issue_entries: int = 194
    load_entries: int = 144
    store_entries: int = 112
    width_decode: int = 12
    width_retire: int = 12
    fetch_width: int = 12
    issue_width: int = 12
    int_phys_regs: int = 448
    vec_phys_regs: int = 400
    ftq_entries: int = 24
    fetch_buffer_entries: int = 48
    decode_buffer_entries: int = 48
    fetch_to_decode_cycles: int = 4
    decode_to_rename_cycles: int = 2
    rename_to_dispatch_cycles: int = 2
    cp_resteer_penalty_cycles: int = 12
    wp_resteer_penalty_cycles: int = 12
    decode_resteer_penalty_cycles: int = 1
    lat_alu: int = 1
    lat_long_alu: int = 12
    lat_branch: int = 1
    lat_store: int = 1
    wp_store_address_fill: bool = True
    warmup_instructions: int = 0
    debug_checks: bool = False
    bpu: BpuConfig = field(default_factory=BpuConfig)
    l1i: CacheLevelConfig = _level(0)
    l1d: CacheLevelConfig = _level(1)
    l2: CacheLevelConfig = _level(2)
    llc: CacheLevelConfig = _level(3)
    memory_latency_cycles: int = 200

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in (CP_MODE, WP_MODE):
            raise ConfigError(f"mode must be cp or wp, got {self.mode!r}")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.type == "int" and f.name != "warmup_instructions" and not f.name.endswith("_cycles"):
                if v <= 0:
                    raise ConfigError(f"core.{f.name} must be positive")
            if f.type == "int" and v < 0:
                raise ConfigError(f"core.{f.name} must be >= 0")
        if max(self.width_decode, self.width_retire, self.fetch_width, self.issue_width) > self.rob_entries:
            raise ConfigError("pipeline widths must not exceed the ROB size")

    def build_caches(self) -> CacheHierarchy:
        return CacheHierarchy(self.l1i, self.l1d, self.l2, self.llc, self.memory_latency_cycles)

    def with_mode(self, mode: str) -> "SimConfig":
        return dataclasses.replace(self, mode=mode, bpu=dataclasses.replace(self.bpu))

    # -- flat key view ------------------------------------------------------

    def to_flat(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "bpu":
                for bf in dataclasses.fields(v):
                    out[f"bpu.{bf.name}"] = getattr(v, bf.name)
            elif isinstance(v, CacheLevelConfig):
                for cf in dataclasses.fields(v):
                    out[f"cache.{f.name}.{cf.name}"] = getattr(v, cf.name)
            elif f.name == "memory_latency_cycles":
                out["cache.memory_latency_cycles"] = v
            else:
                out[f"core.{f.name}"] = v
        return out

    def digest(self, include_mode: bool = False) -> str:
        flat = self.to_flat()
        if not include_mode:
            flat.pop("core.mode")
        flat.pop("core.debug_checks")
        return hashlib.sha256(json.dumps(flat, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_flat(cls, items: dict) -> "SimConfig":
        cfg = cls()
        core, bpu, levels = {}, {}, {n: {} for n in ("l1i", "l1d", "l2", "llc")}
        core_names = {f.name: f for f in dataclasses.fields(cls)}
        bpu_names = {f.name: f for f in dataclasses.fields(BpuConfig)}
        lvl_names = {f.name: f for f in dataclasses.fields(CacheLevelConfig)}
        for key, raw in items.items():
            parts = key.split(".")
            if parts[0] == "core" and len(parts) == 2 and parts[1] in core_names \
                    and parts[1] not in ("bpu", "l1i", "l1d", "l2", "llc"):
                core[parts[1]] = _coerce(raw, getattr(cfg, parts[1]), key)
            elif parts[0] == "bpu" and len(parts) == 2 and parts[1] in bpu_names:
                bpu[parts[1]] = _coerce(raw, getattr(cfg.bpu, parts[1]), key)
            elif key == "cache.memory_latency_cycles":
                core["memory_latency_cycles"] = _coerce(raw, 0, key)
            elif parts[0] == "cache" and len(parts) == 3 and parts[1] in levels and parts[2] in lvl_names:
                levels[parts[1]][parts[2]] = _coerce(raw, 0, key)
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        try:
            for name, over in levels.items():
                if over:
                    core[name] = dataclasses.replace(getattr(cfg, name), **over)
            if bpu:
                core["bpu"] = dataclasses.replace(cfg.bpu, **bpu)
            return dataclasses.replace(cfg, **core)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _coerce(raw, like, key: str):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    try:
        if isinstance(like, bool):
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if isinstance(like, int):
            return int(s, 0)
        if isinstance(like, float):
            return float(s)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return s


def parse_flat(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    items = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        k = k.strip()
        if k in items:
            raise ConfigError(f"line {n}: duplicate key {k!r}")
        items[k] = v.strip()
    return items


def load_config(path: str | Path | None) -> SimConfig:
    if path is None:
        return SimConfig()
    return SimConfig.from_flat(parse_flat(Path(path).read_text()))


def dump_flat(items: dict) -> str:
    return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n" for k, v in items.items())
