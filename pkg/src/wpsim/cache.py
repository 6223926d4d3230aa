"""Non-inclusive cache hierarchy with wrong-path fill provenance.

Lines are installed at request time and carry the cycle their fill
completes; a request that finds a line still in flight merges into the
outstanding MSHR.  Every line remembers who filled it (CP or WP, demand or
FTQ prefetch) so WP fills can later be classified as useful (first CP
demand touch) or useless (evicted untouched).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

LINE_BYTES = 64
LINE_SHIFT = 6

IFETCH, LOAD, STORE, PREFETCH = "ifetch", "load", "store_addr", "prefetch"
KINDS = (IFETCH, LOAD, STORE, PREFETCH)
CP, WP = "cp", "wp"
ATTRS = (CP, WP)

CP_DEMAND, WP_DEMAND, PF_CP, PF_WP = "cp-demand", "wp-demand", "ftq-prefetch-cp", "ftq-prefetch-wp"
ORIGINS = (CP_DEMAND, WP_DEMAND, PF_CP, PF_WP)
WP_ORIGINS = frozenset({WP_DEMAND, PF_WP})
# provenance given to lines resident when statistics are reset after warm-up
WARM = "warmup"


def origin_for(kind: str, attr: str) -> str:
    if kind == PREFETCH:
        return PF_WP if attr == WP else PF_CP
    return WP_DEMAND if attr == WP else CP_DEMAND


@dataclass
class CacheLevelConfig:
    size: int
    ways: int
    latency: int
    mshr_entries: int = 16

    def __post_init__(self):
        if self.size <= 0 or self.ways <= 0 or self.size % (self.ways * LINE_BYTES):
            raise ValueError(f"cache size {self.size} not divisible by {self.ways} ways x {LINE_BYTES}B")

    @property
    def sets(self) -> int:
        return self.size // (self.ways * LINE_BYTES)


class LineMeta:
    __slots__ = ("tag", "fill_origin", "used_by_cp", "ready_cycle")

    def __init__(self, tag: int, fill_origin: str, ready_cycle: int):
        self.tag = tag
        self.fill_origin = fill_origin
        self.used_by_cp = False
        self.ready_cycle = ready_cycle

    @property
    def valid(self) -> bool:
        return True


@dataclass
class LevelStats:
    hits: dict = field(default_factory=lambda: {(k, a): 0 for k in KINDS for a in ATTRS})
    misses: dict = field(default_factory=lambda: {(k, a): 0 for k in KINDS for a in ATTRS})
    mshr_merges: int = 0
    fills: dict = field(default_factory=lambda: {o: 0 for o in ORIGINS})
    evictions: int = 0
    useful_wp_fills: int = 0
    useless_wp_fills: int = 0
    resident_unused_wp_fills: int = 0

    def total(self, which: str, kinds=KINDS, attrs=ATTRS) -> int:
        d = self.hits if which == "hits" else self.misses
        return sum(d[(k, a)] for k in kinds for a in attrs)

    @property
    def accesses(self) -> int:
        return self.total("hits") + self.total("misses")

    @property
    def wp_fills(self) -> int:
        return self.fills[WP_DEMAND] + self.fills[PF_WP]

    def to_dict(self) -> dict:
        d = {}
        for k in KINDS:
            for a in ATTRS:
                d[f"hits.{k}.{a}"] = self.hits[(k, a)]
                d[f"misses.{k}.{a}"] = self.misses[(k, a)]
        d["hits"] = self.total("hits")
        d["misses"] = self.total("misses")
        d["demand_hits"] = self.total("hits", (IFETCH, LOAD, STORE))
        d["demand_misses"] = self.total("misses", (IFETCH, LOAD, STORE))
        d["cp_demand_misses"] = self.total("misses", (IFETCH, LOAD, STORE), (CP,))
        d["mshr_merges"] = self.mshr_merges
        for o in ORIGINS:
            d[f"fills.{o}"] = self.fills[o]
        d["evictions"] = self.evictions
        d["wp_fills"] = self.wp_fills
        d["useful_wp_fills"] = self.useful_wp_fills
        d["useless_wp_fills"] = self.useless_wp_fills
        d["resident_unused_wp_fills"] = self.resident_unused_wp_fills
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LevelStats":
        s = cls()
        for k in KINDS:
            for a in ATTRS:
                s.hits[(k, a)] = d[f"hits.{k}.{a}"]
                s.misses[(k, a)] = d[f"misses.{k}.{a}"]
        s.mshr_merges = d["mshr_merges"]
        for o in ORIGINS:
            s.fills[o] = d[f"fills.{o}"]
        s.evictions = d["evictions"]
        s.useful_wp_fills = d["useful_wp_fills"]
        s.useless_wp_fills = d["useless_wp_fills"]
        s.resident_unused_wp_fills = d["resident_unused_wp_fills"]
        return s


class CacheLevel:
    def __init__(self, name: str, cfg: CacheLevelConfig, lower: "CacheLevel | None" = None):
        self.name = name
        self.cfg = cfg
        self.lower = lower
        self.latency = cfg.latency
        self.n_sets = cfg.sets
        self.ways = cfg.ways
        self.sets = [dict() for _ in range(self.n_sets)]   # tag -> LineMeta, LRU first
        self.inflight: list[int] = []                      # heap of fill-ready cycles
        self.stats = LevelStats()
        self.eviction_log: list | None = None

    def _line(self, line_addr: int):
        return self.sets[line_addr % self.n_sets], line_addr // self.n_sets

    def probe(self, addr: int):
        s, tag = self._line(addr >> LINE_SHIFT)
        return s.get(tag)

    def mshr_occupancy(self, now: int) -> int:
        h = self.inflight
        while h and h[0] <= now:
            heapq.heappop(h)
        return len(h)

    def mshr_available(self, now: int) -> bool:
        return self.mshr_occupancy(now) < self.cfg.mshr_entries

    def touch(self, line, kind: str, attr: str) -> None:
        if attr == CP and kind != PREFETCH and not line.used_by_cp:
            line.used_by_cp = True
            if line.fill_origin in WP_ORIGINS:
                self.stats.useful_wp_fills += 1

    def install(self, s: dict, tag: int, origin: str, ready: int, line_addr: int) -> None:
        if len(s) >= self.ways:
            victim_tag = next(iter(s))
            victim = s.pop(victim_tag)
            self.stats.evictions += 1
            if victim.fill_origin in WP_ORIGINS and not victim.used_by_cp:
                self.stats.useless_wp_fills += 1
            if self.eviction_log is not None:
                self.eviction_log.append(victim_tag * self.n_sets + line_addr % self.n_sets)
        s[tag] = LineMeta(tag, origin, ready)
        self.stats.fills[origin] += 1

    def resident_unused_wp(self) -> int:
        return sum(1 for s in self.sets for ln in s.values()
                   if ln.fill_origin in WP_ORIGINS and not ln.used_by_cp)

    def finalize(self) -> None:
        self.stats.resident_unused_wp_fills = self.resident_unused_wp()

    def reset_stats(self) -> None:
        self.stats = LevelStats()
        for s in self.sets:
            for ln in s.values():
                ln.fill_origin = WARM


class CacheHierarchy:
    """L1I and L1D over a shared L2 and LLC, then fixed-latency memory."""

    def __init__(self, l1i: CacheLevelConfig, l1d: CacheLevelConfig,
                 l2: CacheLevelConfig, llc: CacheLevelConfig, memory_latency: int = 200):
        self.memory_latency = memory_latency
        self.llc = CacheLevel("llc", llc)
        self.l2 = CacheLevel("l2", l2, self.llc)
        self.l1i = CacheLevel("l1i", l1i, self.l2)
        self.l1d = CacheLevel("l1d", l1d, self.l2)
        self.levels = {"l1i": self.l1i, "l1d": self.l1d, "l2": self.l2, "llc": self.llc}

    @classmethod
    def default(cls) -> "CacheHierarchy":
        return cls(*default_level_configs(), memory_latency=200)

    def access(self, top: CacheLevel, addr: int, kind: str, attr: str, now: int):
        """Look up ``addr`` starting at ``top``.

        Returns the latency in cycles, or None when a level that would have to
        allocate an MSHR is full (nothing is modified; retry next cycle).
        """
        line_addr = addr >> LINE_SHIFT
        n = top.n_sets
        s = top.sets[line_addr % n]
        tag = line_addr // n
        line = s.get(tag)
        if line is not None and line.ready_cycle <= now:
            # common case: settled hit in the first level
            del s[tag]
            s[tag] = line
            top.stats.hits[(kind, attr)] += 1
            if attr == CP and kind != PREFETCH and not line.used_by_cp:
                top.touch(line, kind, attr)
            return top.latency
        # Probe pass: find how deep the request goes and check MSHR space.
        path = []
        lvl = top
        while lvl is not None:
            s, tag = lvl._line(line_addr)
            line = s.get(tag)
            path.append((lvl, s, tag, line))
            if line is not None:
                break
            lvl = lvl.lower
        for lvl, s, tag, line in path:
            if line is None and not lvl.mshr_available(now):
                return None
        # Latency walks back up from where the line was found.
        bottom_line = path[-1][3]
        if bottom_line is None:
            ready = now + sum(p[0].latency for p in path) + self.memory_latency
        else:
            ready = max(now + sum(p[0].latency for p in path), bottom_line.ready_cycle)
        origin = origin_for(kind, attr)
        for lvl, s, tag, line in path:
            st = lvl.stats
            if line is None:
                st.misses[(kind, attr)] += 1
                lvl.install(s, tag, origin, ready, line_addr)
                heapq.heappush(lvl.inflight, ready)
                if attr == CP and kind != PREFETCH:
                    new = s[tag]
                    new.used_by_cp = True
            else:
                del s[tag]
                s[tag] = line
                if line.ready_cycle > now:
                    st.misses[(kind, attr)] += 1
                    st.mshr_merges += 1
                else:
                    st.hits[(kind, attr)] += 1
                lvl.touch(line, kind, attr)
        return ready - now

    def ifetch(self, addr: int, attr: str, now: int):
        return self.access(self.l1i, addr, IFETCH, attr, now)

    def prefetch(self, addr: int, attr: str, now: int):
        return self.access(self.l1i, addr, PREFETCH, attr, now)

    def ftq_prefetch(self, blocks, attr: str, now: int) -> tuple[int, list]:
        """Issue L1I prefetches for fetch blocks.

        Returns (issued, deferred): duplicates in the list merge into one
        request; blocks refused for lack of MSHRs are returned for retry.
        """
        seen = set()
        issued = 0
        deferred = []
        for b in blocks:
            line = b >> LINE_SHIFT
            if line in seen:
                continue
            seen.add(line)
            if self.prefetch(b, attr, now) is None:
                deferred.append(b)
            else:
                issued += 1
        return issued, deferred

    def load(self, addr: int, attr: str, now: int):
        return self.access(self.l1d, addr, LOAD, attr, now)

    def store(self, addr: int, attr: str, now: int):
        return self.access(self.l1d, addr, STORE, attr, now)

    def finalize(self) -> None:
        for lvl in self.levels.values():
            lvl.finalize()

    def reset_stats(self) -> None:
        for lvl in self.levels.values():
            lvl.reset_stats()

    def snapshot_stats(self) -> dict:
        self.finalize()
        return {name: lvl.stats.to_dict() for name, lvl in self.levels.items()}


def default_level_configs() -> tuple[CacheLevelConfig, ...]:
    return (
        CacheLevelConfig(32 * 1024, 8, 2, 16),
        CacheLevelConfig(64 * 1024, 16, 1, 16),
        CacheLevelConfig(1024 * 1024, 16, 10, 32),
        CacheLevelConfig(2 * 1024 * 1024, 16, 20, 64),
    )
