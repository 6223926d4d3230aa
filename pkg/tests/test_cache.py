import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wpsim.cache import (CP, IFETCH, LOAD, PREFETCH, STORE, WP, CacheHierarchy, CacheLevelConfig,
                         LevelStats, default_level_configs)


def toy_hierarchy(lat=(1, 2, 3, 4), mem=50, mshr=64):
    cfgs = [CacheLevelConfig(256, 2, l, mshr) for l in lat]
    return CacheHierarchy(*cfgs, memory_latency=mem)


class ListCache:
    """Brute-force model: each set is a list of [line, origin, used] with MRU last."""

    def __init__(self, n_sets, ways):
        self.sets = [[] for _ in range(n_sets)]
        self.ways = ways
        self.evicted: list[int] = []
        self.useful = self.useless = 0
        self.fills = 0

    def find(self, line):
        for e in self.sets[line % len(self.sets)]:
            if e[0] == line:
                return e
        return None

    def touch(self, e, kind, attr):
        s = self.sets[e[0] % len(self.sets)]
        s.remove(e)
        s.append(e)
        if attr == CP and kind != PREFETCH and not e[2]:
            e[2] = True
            if e[1] == WP:
                self.useful += 1

    def fill(self, line, kind, attr):
        s = self.sets[line % len(self.sets)]
        if len(s) == self.ways:
            v = s.pop(0)
            self.evicted.append(v[0])
            if v[1] == WP and not v[2]:
                self.useless += 1
        s.append([line, attr, attr == CP and kind != PREFETCH])
        self.fills += 1


class ListHierarchy:
    def __init__(self, lat, mem):
        self.lat, self.mem = lat, mem
        self.l1i, self.l1d, self.l2, self.llc = (ListCache(2, 2) for _ in range(4))

    def access(self, top, line, kind, attr):
        path = [top, self.l2, self.llc]
        lats = [self.lat[0] if top is self.l1i else self.lat[1], self.lat[2], self.lat[3]]
        total = 0
        found = None
        for i, c in enumerate(path):
            total += lats[i]
            if c.find(line) is not None:
                found = i
                break
        if found is None:
            total += self.mem
        depth = 3 if found is None else found + 1
        for i in range(depth):
            c = path[i]
            e = c.find(line)
            if e is None:
                c.fill(line, kind, attr)
            else:
                c.touch(e, kind, attr)
        return found, total


def run_pair(seed, n, lines=12):
    rng = random.Random(seed)
    lat, mem = (1, 2, 3, 4), 50
    real = toy_hierarchy(lat, mem)
    for lvl in real.levels.values():
        lvl.eviction_log = []
    ref = ListHierarchy(lat, mem)
    outcomes = []
    for i in range(n):
        line = rng.randrange(lines)
        kind = rng.choice([IFETCH, PREFETCH, LOAD, STORE])
        attr = rng.choice([CP, WP])
        top_real, top_ref = (real.l1i, ref.l1i) if kind in (IFETCH, PREFETCH) else (real.l1d, ref.l1d)
        # accesses far apart in time, so nothing is ever in flight
        now = i * 1000
        hit_before = [lvl.stats.total("hits") for lvl in (top_real, real.l2, real.llc)]
        lat_real = real.access(top_real, line * 64 + rng.randrange(64), kind, attr, now)
        hit_after = [lvl.stats.total("hits") for lvl in (top_real, real.l2, real.llc)]
        hit_level = next((j for j in range(3) if hit_after[j] > hit_before[j]), None)
        found, lat_ref = ref.access(top_ref, line, kind, attr)
        outcomes.append(((hit_level, lat_real), (found, lat_ref)))
    return real, ref, outcomes


@pytest.mark.parametrize("seed", range(3))
def test_toy_hierarchy_matches_list_model(seed):
    real, ref, outcomes = run_pair(seed, 2000)
    for a, b in outcomes:
        assert a == b
    for name in ("l1i", "l1d", "l2", "llc"):
        lvl, model = real.levels[name], getattr(ref, name)
        assert lvl.eviction_log == model.evicted
        assert lvl.stats.useful_wp_fills == model.useful
        assert lvl.stats.useless_wp_fills == model.useless
        assert sum(lvl.stats.fills.values()) == model.fills


def test_cold_miss_latency_sums_all_levels():
    h = CacheHierarchy(*default_level_configs(), memory_latency=200)
    assert h.load(0x1234, CP, 0) == 1 + 10 + 20 + 200
    assert h.ifetch(0x8000, CP, 0) == 2 + 10 + 20 + 200
    for name in ("l1d", "l2", "llc"):
        assert h.levels[name].stats.misses[(LOAD, CP)] == 1


def test_hit_after_fill_completes():
    h = toy_hierarchy()
    h.load(0x40, CP, 0)
    assert h.load(0x40, CP, 1000) == 2
    assert h.l1d.stats.hits[(LOAD, CP)] == 1


def test_in_flight_line_merges():
    h = toy_hierarchy()
    first = h.load(0x40, CP, 0)
    second = h.load(0x40, CP, 10)
    assert second == first - 10
    st_ = h.l1d.stats
    assert st_.mshr_merges == 1 and st_.misses[(LOAD, CP)] == 2 and st_.fills["cp-demand"] == 1


def test_full_mshr_refuses_without_side_effects():
    h = toy_hierarchy(mshr=1)
    assert h.load(0x0, CP, 0) is not None
    before = h.l1d.stats.to_dict()
    assert h.load(0x1000, CP, 1) is None
    assert h.l1d.stats.to_dict() == before
    assert h.load(0x1000, CP, 1000) is not None


def test_wp_fill_then_cp_touch_is_useful():
    h = toy_hierarchy()
    h.load(0x80, WP, 0)
    h.load(0x80, CP, 1000)
    assert h.l1d.stats.useful_wp_fills == 1
    h.load(0x80, CP, 2000)
    assert h.l1d.stats.useful_wp_fills == 1


def test_wp_fill_evicted_untouched_is_useless():
    h = toy_hierarchy()
    h.load(0x0, WP, 0)              # set 0
    h.load(0x80, CP, 1000)          # set 0
    h.load(0x100, CP, 2000)         # set 0, evicts the WP line
    assert h.l1d.stats.useless_wp_fills == 1 and h.l1d.stats.useful_wp_fills == 0


def test_prefetch_touch_is_not_a_use():
    h = toy_hierarchy()
    h.ifetch(0x0, WP, 0)
    h.prefetch(0x0, CP, 1000)
    assert h.l1i.stats.useful_wp_fills == 0
    h.finalize()
    assert h.l1i.stats.resident_unused_wp_fills == 1


def test_ftq_prefetch_resident_blocks_hit():
    h = toy_hierarchy()
    blocks = [0x0, 0x40, 0x80, 0xC0]
    for b in blocks:
        h.ifetch(b, CP, 0)
    fills_before = sum(h.l1i.stats.fills.values())
    issued, deferred = h.ftq_prefetch(blocks, CP, 5000)
    assert issued == 4 and deferred == []
    assert sum(h.l1i.stats.fills.values()) == fills_before
    assert h.l1i.stats.hits[(PREFETCH, CP)] == 4


def test_ftq_prefetch_wp_attribution_and_merge():
    h = toy_hierarchy()
    issued, deferred = h.ftq_prefetch([0x200, 0x204, 0x200], WP, 0)
    assert issued == 1
    assert h.l1i.stats.fills["ftq-prefetch-wp"] == 1 and sum(h.l1i.stats.fills.values()) == 1


def test_ftq_prefetch_defers_when_mshrs_full():
    h = toy_hierarchy(mshr=1)
    issued, deferred = h.ftq_prefetch([0x0, 0x40], CP, 0)
    assert issued == 1 and deferred == [0x40]


def test_fresh_stats_are_zero():
    d = toy_hierarchy().snapshot_stats()
    assert all(v == 0 for lvl in d.values() for v in lvl.values())


@given(st.lists(st.tuples(st.integers(0, 40), st.sampled_from([IFETCH, PREFETCH, LOAD, STORE]),
                          st.sampled_from([CP, WP]), st.integers(0, 30)), max_size=300))
def test_wp_fill_partition(accesses):
    h = toy_hierarchy(mshr=4)
    now = 0
    for line, kind, attr, gap in accesses:
        now += gap
        top = h.l1i if kind in (IFETCH, PREFETCH) else h.l1d
        h.access(top, line * 64, kind, attr, now)
    h.finalize()
    for lvl in h.levels.values():
        s = lvl.stats
        assert s.useful_wp_fills + s.useless_wp_fills + s.resident_unused_wp_fills == s.wp_fills
        assert sum(len(x) for x in lvl.sets) <= lvl.n_sets * lvl.ways


def test_level_stats_dict_round_trip():
    h = toy_hierarchy()
    rng = random.Random(2)
    for i in range(200):
        h.load(rng.randrange(4096), rng.choice([CP, WP]), i * 3)
    h.finalize()
    d = h.l1d.stats.to_dict()
    assert LevelStats.from_dict(d).to_dict() == d


def test_bad_geometry_rejected():
    with pytest.raises(ValueError):
        CacheLevelConfig(1000, 3, 1)
