"""Command-line entry point: gen, validate, run, compare, sweep.

Exit status: 0 success, 1 usage error, 2 trace validation failure,
3 simulation assertion (a JSON diagnostic dump goes to stderr).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics
from .config import ConfigError, SimConfig, load_config
from .core import Core, SimulationAssertion
from .metrics import CompareError, RunStats
from .trace import TraceError, load_trace, save_trace, trace_digest, validate_trace
from .tracegen import SpecError, describe, generate, load_spec

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_ASSERT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wpsim", description="Wrong-path trace generation and simulation.")
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic trace from a workload file")
    g.add_argument("--config", required=True, help="workload key=value file")
    g.add_argument("--out", required=True, help="trace output path")
    g.add_argument("--seed", type=int, help="override the workload seed")

    v = sub.add_parser("validate", help="check a trace file against the format rules")
    v.add_argument("--trace", required=True)
    v.add_argument("--format", choices=("text", "json"), default="text")

    r = sub.add_parser("run", help="simulate one trace")
    r.add_argument("--trace", required=True)
    r.add_argument("--config", help="simulator key=value file (defaults when omitted)")
    r.add_argument("--mode", choices=("wp", "cp"))
    r.add_argument("--out", help="RunStats output path (stdout when omitted)")
    r.add_argument("--format", choices=("json", "csv"), default="json")

    c = sub.add_parser("compare", help="derive WP-vs-CP deltas from two runs")
    c.add_argument("wp_stats")
    c.add_argument("cp_stats")
    c.add_argument("--out")
    c.add_argument("--format", choices=("json", "csv"), default="json")

    s = sub.add_parser("sweep", help="run seeds x configs x modes and write one CSV")
    s.add_argument("--workload", required=True, help="workload key=value file")
    s.add_argument("--seed", type=int, action="append", required=True)
    s.add_argument("--config", action="append", help="simulator config file (repeatable)")
    s.add_argument("--mode", action="append", choices=("wp", "cp"))
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    return p


def _write(out: str | None, data: bytes) -> None:
    if out is None:
        sys.stdout.write(data.decode())
    else:
        Path(out).write_bytes(data)


def _distinct(out: str | None, *inputs) -> None:
    if out is None:
        return
    o = os.path.abspath(out)
    for i in inputs:
        if i is not None and os.path.abspath(i) == o:
            raise UsageError(f"output path {out} is also an input")


def _read_stats(path: str) -> RunStats:
    data = Path(path).read_bytes()
    fmt = "csv" if path.endswith(".csv") else "json"
    obj = metrics.load(data, fmt)
    if isinstance(obj, list):
        if len(obj) != 1:
            raise UsageError(f"{path}: expected exactly one RunStats row")
        obj = obj[0]
    if not isinstance(obj, RunStats):
        raise UsageError(f"{path}: not a RunStats file")
    return obj


def cmd_gen(a) -> int:
    _distinct(a.out, a.config)
    spec = load_spec(a.config)
    if a.seed is not None:
        spec = dataclasses.replace(spec, seed=a.seed)
    recs = generate(spec)
    digest = save_trace(a.out, recs)
    rep = describe(spec, recs)
    print(json.dumps({"trace": a.out, "sha256": digest, **dataclasses.asdict(rep)}, indent=2))
    return EXIT_OK


def cmd_validate(a) -> int:
    with open(a.trace, "rb") as fh:
        rep = validate_trace(fh)
    if a.format == "json":
        body = {"ok": rep.ok, **rep.summary(),
                "violation_list": [json.loads(v.to_json()) for v in rep.violations]}
        print(json.dumps(body, indent=2))
    else:
        print(json.dumps(rep.summary()))
        sys.stdout.write(rep.to_jsonl())
    return EXIT_OK if rep.ok else EXIT_INVALID


def _simulate_file(trace_path: str, cfg: SimConfig) -> RunStats:
    _, recs, digest = load_trace(trace_path)
    return Core(recs, cfg, trace_hash=digest).run()


def cmd_run(a) -> int:
    _distinct(a.out, a.trace, a.config)
    cfg = load_config(a.config)
    if a.mode:
        cfg = cfg.with_mode(a.mode)
    stats = _simulate_file(a.trace, cfg)
    _write(a.out, metrics.emit(stats if a.format == "json" else [stats], a.format))
    return EXIT_OK


def cmd_compare(a) -> int:
    _distinct(a.out, a.wp_stats, a.cp_stats)
    rep = metrics.compare(_read_stats(a.wp_stats), _read_stats(a.cp_stats))
    _write(a.out, metrics.emit(rep if a.format == "json" else [rep], a.format))
    return EXIT_OK


def sweep_job(job: tuple) -> dict:
    """One isolated sweep point: (workload, seed, config, mode) -> CSV row."""
    spec, seed, cfg, mode = job
    recs = generate(dataclasses.replace(spec, seed=seed))
    stats = Core(recs, cfg.with_mode(mode), trace_hash=trace_digest(recs)).run()
    row = next(csv.DictReader(io.StringIO(metrics.emit([stats], "csv").decode())))
    return {"seed": str(seed), **row}


def sweep_rows(spec, seeds, cfgs, modes, jobs: int = 1) -> list[dict]:
    work = [(spec, s, c, m) for s in seeds for c in cfgs for m in modes]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(sweep_job, work))
    else:
        rows = [sweep_job(w) for w in work]
    rows.sort(key=lambda r: (int(r["seed"]), r["config_hash"], r["mode"]))
    return rows


def cmd_sweep(a) -> int:
    _distinct(a.out, a.workload, *(a.config or []))
    if a.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    spec = load_spec(a.workload)
    cfgs = [load_config(p) for p in a.config] if a.config else [SimConfig()]
    modes = a.mode or ["wp", "cp"]
    rows = sweep_rows(spec, a.seed, cfgs, modes, a.jobs)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    Path(a.out).write_text(buf.getvalue())
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "validate": cmd_validate, "run": cmd_run,
            "compare": cmd_compare, "sweep": cmd_sweep}


def main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
        if a.cmd is None:
            raise UsageError("a subcommand is required")
        return COMMANDS[a.cmd](a)
    except UsageError as exc:
        print(f"wpsim: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, SpecError, CompareError, FileNotFoundError) as exc:
        print(f"wpsim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TraceError as exc:
        print(f"wpsim: invalid trace: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SimulationAssertion as exc:
        print(f"wpsim: simulation assertion: {exc}", file=sys.stderr)
        print(json.dumps(exc.dump, indent=2, default=str), file=sys.stderr)
        return EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
