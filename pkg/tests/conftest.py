import os

from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from wpsim.trace import (BRANCH_OPS, DIRECT_UNCOND_OPS, F_TAKEN, F_TRIGGER, F_TRIGGER_LS,
                         F_WRONG_PATH, NO_REG, TraceRecord)

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

u64 = st.integers(0, (1 << 64) - 1)
reg = st.one_of(st.just(NO_REG), st.integers(0, 127))


@st.composite
def records(draw, wrong_path=False):
    """A single record satisfying every per-record rule (never a trigger)."""
    op = draw(st.integers(0, 9))
    flags = F_WRONG_PATH if wrong_path else 0
    if op in DIRECT_UNCOND_OPS:
        flags |= F_TAKEN
    elif op in BRANCH_OPS and draw(st.booleans()):
        flags |= F_TAKEN
    mem = draw(st.integers(1, (1 << 64) - 1)) if op in (1, 2) else 0
    size = draw(st.integers(0, 3)) if op in (1, 2) else 0
    srcs = tuple(draw(st.lists(reg, min_size=4, max_size=4)))
    dsts = tuple(draw(st.lists(reg, min_size=2, max_size=2)))
    if op in BRANCH_OPS or op == 2:
        dsts = (NO_REG, NO_REG)
    return TraceRecord(draw(u64), draw(u64), op, flags, srcs, dsts, mem, size)


@st.composite
def traces(draw, max_cp=30):
    """A valid CP stream with flat WP segments after random trigger records."""
    n = draw(st.integers(0, max_cp))
    out = []
    for i in range(n):
        rec = draw(records())
        last = i == n - 1
        if not last and draw(st.integers(0, 4)) == 0:
            ls = rec.op_class in (1, 2) and draw(st.booleans())
            if rec.op_class in BRANCH_OPS or ls:
                rec = rec._replace(flags=rec.flags | F_TRIGGER | (F_TRIGGER_LS if ls else 0))
                out.append(rec)
                out.extend(draw(st.lists(records(wrong_path=True), min_size=1, max_size=5)))
                continue
        out.append(rec)
    return out


# -- acceptance reporting: one PASS/FAIL line per criterion -------------------------

ACCEPTANCE_DETAIL: dict[str, str] = {}
_acceptance_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_a") or "acceptance" not in report.nodeid:
        return
    tag = name.split("_")[1].upper()
    if report.when == "call" or report.failed:
        prev = _acceptance_outcomes.get(tag)
        if prev != "FAIL":
            _acceptance_outcomes[tag] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(_acceptance_outcomes, key=lambda t: int(t[1:])):
        detail = ACCEPTANCE_DETAIL.get(tag, "")
        terminalreporter.write_line(f"{tag} {_acceptance_outcomes[tag]} {detail}".rstrip())
