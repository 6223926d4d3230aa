import copy

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wpsim.metrics import (CompareError, CompareReport, RunStats, compare, csv_columns, emit, load,
                           pct_change, pct_reduction, rob_bucket)


def stats(mode="wp", **kw):
    s = RunStats(mode=mode, trace_hash="t", config_hash="c", cycles=1000,
                 retired_cp_instructions=800, fetched_instructions={"cp": 100, "wp": 0})
    for k, v in kw.items():
        setattr(s, k, v)
    return s


def test_identical_runs_give_zero_deltas():
    wp, cp = stats("wp"), stats("cp")
    rep = compare(wp, cp)
    assert rep.ipc_speedup_pct == 0 and rep.rel_instruction_increase_pct == 0
    for lvl in rep.cache.values():
        for k, v in lvl.items():
            assert v == 0, k


def test_relative_instruction_increase_arithmetic():
    wp = stats("wp", fetched_instructions={"cp": 100, "wp": 83})
    rep = compare(wp, stats("cp"))
    assert rep.rel_instruction_increase_pct == pytest.approx(83.0)


def test_cp_miss_reduction_arithmetic():
    wp, cp = stats("wp"), stats("cp")
    wp.cache["l1i"]["misses.ifetch.cp"] = 112
    wp.cache["l1i"]["misses.ifetch.wp"] = 500
    cp.cache["l1i"]["misses.ifetch.cp"] = 200
    cp.cache["l1i"]["misses"] = 200
    cp.cache["l1i"]["cp_demand_misses"] = 200
    rep = compare(wp, cp)
    assert rep.cache["l1i"]["cp_miss_reduction_pct"] == pytest.approx(44.0)
    assert rep.cache["l1i"]["cp_demand_miss_reduction_pct"] == pytest.approx(44.0)


def test_ipc_speedup():
    rep = compare(stats("wp", cycles=900), stats("cp", cycles=1000))
    assert rep.ipc_speedup_pct == pytest.approx(100 * (1000 / 900 - 1))


def test_compare_rejects_mismatches():
    with pytest.raises(CompareError):
        compare(stats("wp", trace_hash="x"), stats("cp"))
    with pytest.raises(CompareError):
        compare(stats("wp", config_hash="x"), stats("cp"))
    with pytest.raises(CompareError):
        compare(stats("cp"), stats("cp"))
    with pytest.raises(CompareError):
        compare(stats("wp", cycles=0), stats("cp"))


def test_pct_helpers():
    assert pct_change(0, 0) == 0 and pct_change(3, 0) is None and pct_change(150, 100) == 50
    assert pct_reduction(0, 0) == 0 and pct_reduction(1, 0) is None and pct_reduction(25, 100) == 75


def test_rob_buckets_and_mean():
    assert [rob_bucket(x) for x in (0, 31, 32, 511)] == ["0", "0", "32", "480"]
    s = stats(rob_occupancy_at_mispredict={"0": 1, "64": 1})
    assert s.rob_occupancy_mean() == pytest.approx(48.0)


def test_json_round_trip_is_byte_identical():
    s = stats(rob_occupancy_at_mispredict={"32": 4}, squashed_instructions=7)
    data = emit(s, "json")
    assert emit(load(data, "json"), "json") == data
    rep = compare(s, stats("cp"))
    data = emit(rep, "json")
    assert emit(load(data, "json"), "json") == data


def test_empty_stats_csv_row_has_full_header():
    data = emit([RunStats()], "csv").decode().splitlines()
    assert len(data) == 2
    assert data[0].split(",") == csv_columns(RunStats)
    assert "cache.l1i.useful_wp_fills" in data[0]


def test_two_reports_two_rows():
    rep = compare(stats("wp"), stats("cp"))
    lines = emit([rep, rep], "csv").decode().splitlines()
    assert len(lines) == 3 and lines[0].split(",") == csv_columns(CompareReport)


def test_csv_round_trip():
    s = stats(rob_occupancy_at_mispredict={"32": 4}, config={"core.mode": "wp"})
    s.cache["l2"]["hits"] = 9
    back = load(emit([s, copy.deepcopy(s)], "csv"), "csv")
    assert [b.to_dict() for b in back] == [s.to_dict(), s.to_dict()]
    rep = compare(stats("wp"), stats("cp"))
    assert load(emit([rep], "csv"), "csv")[0].to_dict() == rep.to_dict()


@given(st.integers(1, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_stats_dict_round_trip(cycles, retired, wpf):
    s = stats(cycles=cycles, retired_cp_instructions=retired,
              fetched_instructions={"cp": retired, "wp": wpf})
    assert RunStats.from_dict(s.to_dict()) == s
    assert s.ipc == retired / cycles


def test_unknown_fields_rejected():
    with pytest.raises(ValueError):
        RunStats.from_dict({"bogus": 1})
