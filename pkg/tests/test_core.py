import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import traces
from wpsim.config import SimConfig
from wpsim.core import Core, simulate
from wpsim.trace import F_TAKEN, F_TRIGGER, F_TRIGGER_LS, F_WRONG_PATH, NO_REG, TraceRecord, segment_view
from wpsim.tracegen import WorkloadSpec, generate

R = NO_REG


def alu(pc, dst=R, srcs=()):
    s = tuple(srcs) + (R,) * (4 - len(srcs))
    return TraceRecord(pc, pc + 4, 0, 0, s, (dst, R))


def load(pc, addr, dst=R, srcs=()):
    s = tuple(srcs) + (R,) * (4 - len(srcs))
    return TraceRecord(pc, pc + 4, 1, 0, s, (dst, R), addr, 3)


def cond(pc, target, taken, src=R, trigger=False):
    flags = (F_TAKEN if taken else 0) | (F_TRIGGER if trigger else 0)
    return TraceRecord(pc, target if taken else pc + 4, 3, flags, (src, R, R, R))


def wp(rec):
    return rec._replace(flags=rec.flags | F_WRONG_PATH)


def run(recs, mode="wp", record=True, **cfg):
    c = Core(recs, SimConfig(mode=mode, debug_checks=True, **cfg), record_retired=record)
    return c, c.run()


def slow_mispredict(n_wp=3, wp_pc=0x9000, op_class=3):
    """A taken branch fed by a cold load: the fresh predictor says not-taken."""
    head = [load(0x1000, 0x100000, dst=1), alu(0x1004, dst=2, srcs=(1,))]
    if op_class == 3:
        trig = cond(0x1008, 0x2000, True, src=2, trigger=True)
    else:
        trig = TraceRecord(0x1008, 0x2000, op_class, F_TAKEN | F_TRIGGER)
    seg = [wp(alu(wp_pc + 4 * i, dst=3 + i % 8)) for i in range(n_wp)]
    tail = [alu(0x2000 + 4 * i) for i in range(8)]
    return head + [trig] + seg + tail


# -- basic behaviour -------------------------------------------------------------

def test_empty_trace():
    c, st_ = run([])
    assert st_.retired_cp_instructions == 0 and st_.cycles <= 1
    assert st_.fetched_instructions == {"cp": 0, "wp": 0}
    assert all(v == 0 for lvl in st_.cache.values() for v in lvl.values())


@pytest.mark.parametrize("mode", ["wp", "cp"])
def test_straight_line_retires_everything(mode):
    recs = [alu(0x1000 + 4 * i, dst=i % 20) for i in range(3000)]
    c, st_ = run(recs, mode)
    assert st_.retired_cp_instructions == 3000
    assert c.retired_idx == list(range(3000))
    assert st_.ipc <= 12


def test_retire_width_reached_and_respected():
    recs = [alu(0x1000 + 4 * i) for i in range(4000)]
    c = Core(recs, SimConfig())
    per_cycle = []
    orig = c.retire_stage

    def retire():
        before = c._retired_total
        orig()
        per_cycle.append(c._retired_total - before)
    c.retire_stage = retire
    c.run()
    assert max(per_cycle) == 12


def test_narrow_issue_width_bounds_ipc():
    # a small hot code region so instruction fetch is not the limit
    recs = [alu(0x1000 + 4 * (i % 64)) for i in range(4000)]
    st_ = simulate(recs, SimConfig(issue_width=2))
    assert 1.7 < st_.ipc <= 2.0


def test_rob_full_stalls_rename():
    recs = [load(0x1000, 0x200000, dst=1)] + [alu(0x1004 + 4 * i, dst=2 + i % 10) for i in range(200)]
    c, st_ = run(recs, rob_entries=16, width_decode=4, width_retire=4, fetch_width=4, issue_width=4)
    assert st_.rob_full_events > 0 and st_.retired_cp_instructions == 201


def test_warmup_excludes_early_instructions():
    recs = [alu(0x1000 + 4 * i) for i in range(1000)]
    _, full = run(recs)
    _, warm = run(recs, warmup_instructions=400)
    assert warm.retired_cp_instructions == 600
    assert warm.cycles < full.cycles


# -- resteer mechanics ------------------------------------------------------------

def record_resolutions(c):
    log = []
    orig = c._resolve

    def wrapped(inst):
        t = c.now
        orig(inst)
        log.append((t, c.bpu_resume))
    c._resolve = wrapped
    return log


def test_cp_mode_resumes_after_constant_penalty():
    c = Core(slow_mispredict(), SimConfig(mode="cp", debug_checks=True))
    log = record_resolutions(c)
    st_ = c.run()
    assert len(log) == 1
    t, resume = log[0]
    assert resume == t + c.cfg.cp_resteer_penalty_cycles
    assert st_.fetched_instructions["wp"] == 0 and st_.execute_resteers == 0


def test_wp_segment_is_consumed_then_fetch_idles():
    c = Core(slow_mispredict(3), SimConfig(mode="wp", debug_checks=True), record_retired=True)
    log = record_resolutions(c)
    st_ = c.run()
    assert st_.fetched_instructions["wp"] == 3
    assert st_.wp_fetch_idle_cycles > 0
    assert st_.execute_resteers == 1 and st_.decode_resteers == 0
    assert log[0][1] == log[0][0] + c.cfg.wp_resteer_penalty_cycles
    assert st_.squashed_instructions == 3
    cp, _ = segment_view(slow_mispredict(3))
    assert [cp[i].pc for i in c.retired_idx] == [r.pc for r in cp]


def test_wp_fetch_miss_is_wp_attributed():
    _, st_ = run(slow_mispredict(3, wp_pc=0x700000))
    l1i = st_.cache["l1i"]
    assert l1i["misses.prefetch.wp"] + l1i["misses.ifetch.wp"] >= 1
    assert l1i["fills.ftq-prefetch-wp"] >= 1


def test_direct_jump_trigger_resteers_at_decode():
    recs = slow_mispredict(7, op_class=4)
    c, st_ = run(recs)
    assert st_.decode_resteers == 1 and st_.execute_resteers == 0
    assert st_.renamed_instructions["wp"] == 0
    assert st_.squashed_instructions == st_.fetched_instructions["wp"] > 0


def test_conditional_trigger_never_resteers_at_decode():
    _, st_ = run(slow_mispredict(5))
    assert st_.decode_resteers == 0 and st_.execute_resteers == 1


def test_wp_load_fill_survives_squash():
    seg_load = wp(load(0x9000, 0x340000, dst=4))
    recs = slow_mispredict(0)
    i = [r.trigger for r in recs].index(True)
    recs = recs[:i + 1] + [seg_load] + recs[i + 1:] + [load(0x2100, 0x340000, dst=5)]
    _, st_ = run(recs)
    l1d = st_.cache["l1d"]
    assert l1d["fills.wp-demand"] == 1
    assert l1d["useful_wp_fills"] == 1


def test_wp_registers_are_returned():
    recs = slow_mispredict(10)
    c, _ = run(recs)
    c._check_tag_conservation()
    mapped = sum(1 for t in c.rmap if t >= 0)
    assert len(c.free_int) + len(c.free_vec) == c.n_tags - mapped


def test_register_exhaustion_mid_segment():
    recs = slow_mispredict(40)
    c, st_ = run(recs, int_phys_regs=12)
    assert st_.retired_cp_instructions == len(segment_view(recs)[0])
    assert st_.renamed_instructions["wp"] < 40


def test_missing_segment_stalls_like_cp():
    recs = [r for r in slow_mispredict(3) if not r.wrong_path]
    recs = [r._replace(flags=r.flags & ~F_TRIGGER) for r in recs]
    _, w = run(recs, "wp")
    _, c = run(recs, "cp")
    assert w.no_segment_mispredicts == 1
    assert w.cycles == c.cycles


def test_skipped_segment_when_simulator_predicts_correctly():
    # trigger on a not-taken branch: the fresh predictor also says not-taken
    recs = [alu(0x1000), cond(0x1004, 0x3000, False, trigger=True), wp(alu(0x3000)),
            alu(0x1008), alu(0x100C)]
    _, st_ = run(recs)
    assert st_.skipped_segments == 1 and st_.fetched_instructions["wp"] == 0


def test_ls_trigger_plays_segment_in_wp_mode_only():
    ld = load(0x1000, 0x500000, dst=1)._replace(flags=F_TRIGGER | F_TRIGGER_LS)
    recs = [ld, wp(alu(0x1004, dst=2, srcs=(1,))), wp(alu(0x1008)), alu(0x1004, dst=2, srcs=(1,)),
            alu(0x1008)]
    _, w = run(recs, "wp")
    _, c = run(recs, "cp")
    assert w.fetched_instructions["wp"] == 2 and w.execute_resteers == 1
    assert c.fetched_instructions["wp"] == 0 and c.retired_cp_instructions == 3


# -- whole-run properties -------------------------------------------------------------

SMALL_CFG = dict(rob_entries=32, issue_entries=16, load_entries=8, store_entries=8,
                 int_phys_regs=96, vec_phys_regs=80, ftq_entries=4, fetch_buffer_entries=8,
                 decode_buffer_entries=8)


def test_fast_forward_is_exact():
    recs = generate(WorkloadSpec(seed=21, instr_count=8000, ls_trigger_prob=0.05))
    for mode in ("wp", "cp"):
        a = Core(recs, SimConfig(mode=mode), fast_forward=True).run()
        b = Core(recs, SimConfig(mode=mode), fast_forward=False).run()
        assert a == b


def test_capacities_hold_with_small_structures():
    recs = generate(WorkloadSpec(seed=22, instr_count=10000, ls_trigger_prob=0.05))
    for mode in ("wp", "cp"):
        c = Core(recs, SimConfig(mode=mode, debug_checks=True, **SMALL_CFG), record_retired=True)
        orig = c.step_cycle

        def step():
            orig()
            c._check_capacities()
        c.step_cycle = step
        c.run()
        assert c.debug_scans > 0 or mode == "cp"


@settings(max_examples=40, deadline=None)
@given(traces(max_cp=40), st.sampled_from(["wp", "cp"]))
def test_random_traces_retire_cp_stream(recs, mode):
    c, st_ = run(recs, mode, **SMALL_CFG)
    cp, _ = segment_view(recs)
    assert c.retired_idx == list(range(len(cp)))
    assert st_.retired_cp_instructions == len(cp)
    c._check_tag_conservation()


def test_stats_carry_identity():
    recs = [alu(0x1000)]
    st_ = simulate(recs, SimConfig(mode="cp"), trace_hash="abc")
    assert st_.mode == "cp" and st_.trace_hash == "abc" and st_.config_hash == SimConfig().digest()
    assert st_.config["core.rob_entries"] == 512
