"""Synthetic WP trace generator.

A seeded control-flow graph of functions and basic blocks is walked to
produce the correct-path (CP) stream.  A second pass runs an embedded
reference predictor over that stream; where it mispredicts, the trace gets
a WP segment holding the instructions the predictor would have fetched
down its predicted path.

Independent random streams are derived from the seed, so the CP stream
never depends on the predictor settings:

    cfg   - static code layout        cp  - branch outcomes, data addresses
    mix   - which mispredicts are kept ls  - load-store disambiguation triggers
    wp:N  - contents of the segment after CP record N
"""

from __future__ import annotations

import dataclasses
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .config import ConfigError, _coerce, parse_flat
from .trace import (F_TAKEN, F_TRIGGER, F_TRIGGER_LS, F_WRONG_PATH, NO_REG, TraceRecord,
                    check_records)

CODE_BASE = 0x400000
DATA_BASE = 0x10000000
INSTR_BYTES = 4

ALU, LOAD, STORE, COND, JMP, IJMP, CALL, ICALL, RET, LONG = range(10)
CHASE_REG = 30
LOOP_SPAN = 4
FORWARD_SPAN = 8
LOOP_MAX_BIAS = 0.95
PREDICTORS = ("oracle", "bimodal", "gshare")


class SpecError(ValueError):
    pass


@dataclass
class WorkloadSpec:
    seed: int = 1
    n_blocks: int = 256
    block_len_min: int = 3
    block_len_max: int = 10
    cond_bias_alpha: float = 0.5
    cond_bias_beta: float = 0.5
    cond_bias_fixed: float = -1.0          # in [0, 1] overrides the Beta draw
    cond_fraction: float = 0.6
    uncond_fraction: float = 0.1
    call_fraction: float = 0.1
    indirect_fraction: float = 0.1
    indirect_targets: int = 4
    loop_fraction: float = 0.15
    reconvergence_fraction: float = 0.5
    call_depth_max: int = 4
    code_footprint_bytes: int = 0
    data_working_set_bytes: int = 1 << 20
    load_fraction: float = 0.25
    store_fraction: float = 0.1
    long_latency_fraction: float = 0.02
    pointer_chase_fraction: float = 0.1
    stride_fraction: float = 0.6
    embedded_predictor: str = "bimodal"
    predictor_table_log2: int = 12
    gshare_history_bits: int = 12
    predictor_mix: float = 1.0
    ls_trigger_prob: float = 0.0
    wp_depth_limit: int = 512
    instr_count: int = 100_000

    def validate(self) -> None:
        fracs = ("cond_fraction", "uncond_fraction", "call_fraction", "indirect_fraction",
                 "loop_fraction", "reconvergence_fraction", "load_fraction", "store_fraction",
                 "long_latency_fraction", "pointer_chase_fraction", "stride_fraction",
                 "predictor_mix", "ls_trigger_prob")
        for name in fracs:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SpecError(f"{name} must lie in [0, 1], got {v}")
        if self.load_fraction + self.store_fraction + self.long_latency_fraction > 1.0:
            raise SpecError("load_fraction + store_fraction + long_latency_fraction must be <= 1")
        if self.cond_fraction + self.uncond_fraction + self.call_fraction > 1.0:
            raise SpecError("terminator fractions must sum to <= 1")
        if self.n_blocks < 2:
            raise SpecError("n_blocks must be >= 2")
        if self.wp_depth_limit < 1:
            raise SpecError("wp_depth_limit must be >= 1")
        if not 1 <= self.block_len_min <= self.block_len_max:
            raise SpecError("need 1 <= block_len_min <= block_len_max")
        if self.call_depth_max < 0 or self.instr_count < 0 or self.indirect_targets < 1:
            raise SpecError("call_depth_max, instr_count must be >= 0 and indirect_targets >= 1")
        if self.n_blocks < 2 * (self.call_depth_max + 1):
            raise SpecError(f"n_blocks={self.n_blocks} too small for call_depth_max={self.call_depth_max}; "
                            f"need at least {2 * (self.call_depth_max + 1)}")
        if self.data_working_set_bytes < 64:
            raise SpecError("data_working_set_bytes must be >= 64")
        if self.embedded_predictor not in PREDICTORS:
            raise SpecError(f"embedded_predictor must be one of {PREDICTORS}")
        if not (self.cond_bias_fixed < 0 or 0.0 <= self.cond_bias_fixed <= 1.0):
            raise SpecError("cond_bias_fixed must be negative (unset) or in [0, 1]")
        if self.cond_bias_alpha <= 0 or self.cond_bias_beta <= 0:
            raise SpecError("Beta parameters must be positive")

    @classmethod
    def from_flat(cls, items: dict) -> "WorkloadSpec":
        base = cls()
        names = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in items.items():
            name = key[len("workload."):] if key.startswith("workload.") else key
            if name not in names:
                raise ConfigError(f"unknown workload key {key!r}")
            kw[name] = _coerce(raw, getattr(base, name), key)
        spec = cls(**kw)
        spec.validate()
        return spec

    def to_flat(self) -> dict:
        return dataclasses.asdict(self)


def load_spec(path) -> WorkloadSpec:
    return WorkloadSpec.from_flat(parse_flat(Path(path).read_text()))


# -- static code --------------------------------------------------------------

@dataclass
class StaticInst:
    pc: int
    op: int
    srcs: tuple
    dsts: tuple
    mem: tuple = ()          # ("stride", base_off, stride) | ("rand",) | ("chase",)


@dataclass
class Block:
    index: int
    func: int
    start: int
    insts: list = field(default_factory=list)
    term: int = -1           # op class of the terminator, -1 for fall-through
    targets: tuple = ()      # successor block indices for taken outcomes
    bias: float = 0.5

    @property
    def end_pc(self) -> int:
        return self.start + INSTR_BYTES * len(self.insts)


class Program:
    """Static CFG: functions of contiguous blocks, call graph bounded by depth."""

    def __init__(self, spec: WorkloadSpec):
        self.spec = spec
        rng = random.Random(f"{spec.seed}:cfg")
        self.blocks: list[Block] = []
        self.by_pc: dict[int, StaticInst] = {}
        if spec.call_depth_max == 0:
            n_funcs = 1
        else:
            n_funcs = min(max(spec.call_depth_max + 1, spec.n_blocks // 8), spec.n_blocks // 2)
        sizes = [2] * n_funcs
        spare = spec.n_blocks - 2 * n_funcs
        if n_funcs > 1:
            # the driver loop gets a larger share so that it reaches most callees
            sizes[0] += spare // 4
            spare -= spare // 4
        for _ in range(spare):
            sizes[rng.randrange(n_funcs)] += 1
        levels = [0] + [1 + (j - 1) % spec.call_depth_max for j in range(1, n_funcs)] \
            if spec.call_depth_max else [0]
        self.func_ranges = []
        b = 0
        for f, n in enumerate(sizes):
            self.func_ranges.append((b, b + n - 1))
            b += n
        self.func_entry = [r[0] for r in self.func_ranges]
        callees = [[g for g in range(n_funcs) if levels[g] > levels[f]] for f in range(n_funcs)]

        # terminators first (hammocks force the following block to fall through)
        plan: list[tuple] = [None] * spec.n_blocks
        for f, (s, e) in enumerate(self.func_ranges):
            for i in range(s, e + 1):
                if plan[i] is not None:
                    continue
                if i == e:
                    plan[i] = (JMP, (s,)) if f == 0 else (RET, ())
                    continue
                r = rng.random()
                if r < spec.cond_fraction:
                    if i + 2 <= e and plan[i + 1] is None and rng.random() < spec.reconvergence_fraction:
                        plan[i] = (COND, (i + 2,))
                        plan[i + 1] = (-1, ())
                    elif rng.random() < spec.loop_fraction or i + 2 > e:
                        plan[i] = (COND, (rng.randint(max(s, i - LOOP_SPAN), i),))
                    else:
                        plan[i] = (COND, (rng.randint(i + 2, min(e, i + FORWARD_SPAN)),))
                elif r < spec.cond_fraction + spec.uncond_fraction:
                    lo = i + 2 if i + 2 <= e else i + 1
                    if rng.random() < spec.indirect_fraction:
                        k = spec.indirect_targets
                        hi = min(e, i + FORWARD_SPAN)
                        plan[i] = (IJMP, tuple(rng.randint(i + 1, hi) for _ in range(k)))
                    else:
                        plan[i] = (JMP, (rng.randint(lo, max(lo, min(e, i + FORWARD_SPAN))),))
                elif r < spec.cond_fraction + spec.uncond_fraction + spec.call_fraction and callees[f]:
                    if rng.random() < spec.indirect_fraction:
                        k = spec.indirect_targets
                        plan[i] = (ICALL, tuple(self.func_entry[rng.choice(callees[f])] for _ in range(k)))
                    else:
                        plan[i] = (CALL, (self.func_entry[rng.choice(callees[f])],))
                else:
                    plan[i] = (-1, ())
                if f == 0 and plan[i][0] == -1 and callees[f]:
                    # driver blocks that would fall through call out instead
                    plan[i] = (CALL, (self.func_entry[rng.choice(callees[f])],))

        # layout
        body_total = spec.n_blocks * (spec.block_len_min + spec.block_len_max) // 2 * INSTR_BYTES
        gap = 0
        if spec.code_footprint_bytes > body_total and n_funcs > 1:
            gap = (spec.code_footprint_bytes - body_total) // (n_funcs - 1) // 64 * 64
        ws = spec.data_working_set_bytes
        pc = CODE_BASE
        for f, (s, e) in enumerate(self.func_ranges):
            if f:
                pc = (pc + 63) // 64 * 64 + gap
            for i in range(s, e + 1):
                term, targets = plan[i]
                blk = Block(i, f, pc, term=term, targets=targets)
                if term == COND:
                    blk.bias = (spec.cond_bias_fixed if spec.cond_bias_fixed >= 0
                                else rng.betavariate(spec.cond_bias_alpha, spec.cond_bias_beta))
                    if targets[0] <= i and spec.cond_bias_fixed < 0:
                        # drawn back edges exit eventually
                        blk.bias = min(blk.bias, LOOP_MAX_BIAS)
                length = rng.randint(spec.block_len_min, spec.block_len_max)
                n_body = length - 1 if term >= 0 else length
                for _ in range(n_body):
                    blk.insts.append(self._body_inst(rng, pc, ws))
                    pc += INSTR_BYTES
                if term >= 0:
                    srcs = (rng.randrange(30),) if term in (COND, IJMP, ICALL) else ()
                    blk.insts.append(StaticInst(pc, term, srcs, ()))
                    pc += INSTR_BYTES
                self.blocks.append(blk)
        for blk in self.blocks:
            for si in blk.insts:
                self.by_pc[si.pc] = si
        self.block_at = {blk.start: blk.index for blk in self.blocks}
        self.term_block = {blk.insts[-1].pc: blk.index for blk in self.blocks if blk.term >= 0}

    def _body_inst(self, rng: random.Random, pc: int, ws: int) -> StaticInst:
        spec = self.spec
        r = rng.random()
        if r < spec.load_fraction:
            if rng.random() < spec.pointer_chase_fraction:
                return StaticInst(pc, LOAD, (CHASE_REG,), (CHASE_REG,), ("chase",))
            return StaticInst(pc, LOAD, (rng.randrange(30),), (rng.randrange(30),), self._pattern(rng, ws))
        r -= spec.load_fraction
        if r < spec.store_fraction:
            return StaticInst(pc, STORE, (rng.randrange(30), rng.randrange(30)), (), self._pattern(rng, ws))
        r -= spec.store_fraction
        if r < spec.long_latency_fraction:
            return StaticInst(pc, LONG, (64 + rng.randrange(16),), (64 + rng.randrange(16),))
        return StaticInst(pc, ALU, (rng.randrange(30), rng.randrange(30)), (rng.randrange(30),))

    def _pattern(self, rng: random.Random, ws: int) -> tuple:
        if rng.random() < self.spec.stride_fraction:
            return ("stride", rng.randrange(ws // 8) * 8, rng.choice((8, 8, 64, 128)))
        return ("rand",)


def _regs(srcs: tuple, dsts: tuple) -> tuple[tuple, tuple]:
    return (tuple(srcs) + (NO_REG,) * (4 - len(srcs)), tuple(dsts) + (NO_REG,) * (2 - len(dsts)))


def _indirect_weights(k: int) -> list[float]:
    return [0.5 ** j for j in range(k)]


# -- CP walk ----------------------------------------------------------------------

def cp_walk(prog: Program) -> list[TraceRecord]:
    """The correct-path stream: depends only on the CFG and the ``cp`` stream."""
    spec = prog.spec
    rng = random.Random(f"{spec.seed}:cp")
    ws = spec.data_working_set_bytes
    blocks = prog.blocks
    counts: dict[int, int] = {}
    stack: list[int] = []
    out: list[TraceRecord] = []
    n = spec.instr_count
    cur = prog.func_entry[0]
    reg_cache = {}
    while len(out) < n:
        blk = blocks[cur]
        nxt = cur + 1
        for si in blk.insts:
            if len(out) >= n:
                break
            regs = reg_cache.get(si.pc)
            if regs is None:
                regs = reg_cache[si.pc] = _regs(si.srcs, si.dsts)
            op = si.op
            if op == LOAD or op == STORE:
                if si.mem[0] == "stride":
                    c = counts.get(si.pc, 0)
                    counts[si.pc] = c + 1
                    addr = DATA_BASE + (si.mem[1] + c * si.mem[2]) % ws // 8 * 8
                else:
                    addr = DATA_BASE + rng.randrange(ws // 8) * 8
                out.append(TraceRecord(si.pc, si.pc + 4, op, 0, regs[0], regs[1], addr, 3))
                continue
            if op == ALU or op == LONG:
                out.append(TraceRecord(si.pc, si.pc + 4, op, 0, regs[0], regs[1], 0, 0))
                continue
            # terminator
            taken = True
            if op == COND:
                taken = rng.random() < blk.bias
                nxt = blk.targets[0] if taken else cur + 1
            elif op == JMP:
                nxt = blk.targets[0]
            elif op in (IJMP, ICALL):
                nxt = rng.choices(blk.targets, _indirect_weights(len(blk.targets)))[0]
            elif op == CALL:
                nxt = blk.targets[0]
            elif op == RET:
                nxt = stack.pop()
            if op == CALL or op == ICALL:
                stack.append(cur + 1)
            target = blocks[nxt].start if taken else si.pc + 4
            out.append(TraceRecord(si.pc, target, op, F_TAKEN if taken else 0, regs[0], regs[1], 0, 0))
        cur = nxt
    return out


# -- embedded predictor --------------------------------------------------------------

class EmbeddedPredictor:
    """The trace producer's predictor (stand-in for the execution-driven model)."""

    def __init__(self, kind: str, table_log2: int, hist_bits: int):
        self.kind = kind
        self.mask = (1 << table_log2) - 1
        self.table = [1] * (1 << table_log2)
        self.hist_bits = hist_bits
        self.ghist = 0
        self.seen_direct: set[int] = set()
        self.last_target: dict[int, int] = {}

    def _index(self, pc: int, ghist: int) -> int:
        if self.kind == "gshare":
            return ((pc >> 2) ^ ghist) & self.mask
        return (pc >> 2) & self.mask

    def direction(self, pc: int, ghist: int | None = None) -> bool:
        return self.table[self._index(pc, self.ghist if ghist is None else ghist)] >= 2

    def predict(self, rec: TraceRecord) -> tuple[bool, int]:
        """(taken, next_pc) the producer would have fetched."""
        op, pc = rec.op_class, rec.pc
        if self.kind == "oracle" or op == RET:
            return rec.taken, rec.target
        if op == COND:
            t = self.direction(pc)
            return t, (rec.target if t == rec.taken else pc + 4)
        if op in (JMP, CALL):
            return (True, rec.target) if pc in self.seen_direct else (False, pc + 4)
        last = self.last_target.get(pc)
        return (True, last) if last is not None else (False, pc + 4)

    def mispredicts(self, rec: TraceRecord) -> bool:
        op = rec.op_class
        if self.kind == "oracle" or op == RET:
            return False
        if op == COND:
            return self.direction(rec.pc) != rec.taken
        if op in (JMP, CALL):
            return rec.pc not in self.seen_direct
        return self.last_target.get(rec.pc) != rec.target

    def update(self, rec: TraceRecord) -> None:
        op = rec.op_class
        if self.kind == "oracle":
            return
        if op == COND:
            i = self._index(rec.pc, self.ghist)
            self.table[i] = min(self.table[i] + 1, 3) if rec.taken else max(self.table[i] - 1, 0)
            self.ghist = ((self.ghist << 1) | rec.taken) & ((1 << self.hist_bits) - 1)
        elif op in (JMP, CALL):
            self.seen_direct.add(rec.pc)
        elif op in (IJMP, ICALL):
            self.last_target[rec.pc] = rec.target


# -- WP segments ---------------------------------------------------------------------

class WrongPathWalker:
    def __init__(self, prog: Program, pred: EmbeddedPredictor, last_addr: dict):
        self.prog = prog
        self.pred = pred
        self.last_addr = last_addr

    def walk(self, start_pc: int, stack: list, depth: int, rng: random.Random) -> list[TraceRecord]:
        prog = self.prog
        spec = prog.spec
        ws = spec.data_working_set_bytes
        blocks = prog.blocks
        out: list[TraceRecord] = []
        bi = prog.block_at.get(start_pc)
        if bi is None:
            # predicted path leaves mapped code: fetch sequential filler
            pc = start_pc
            while len(out) < min(depth, 16):
                out.append(TraceRecord(pc, pc + 4, ALU, F_WRONG_PATH))
                pc += 4
            return out
        stack = list(stack)
        ghist = self.pred.ghist
        local_addr: dict[int, int] = {}
        while len(out) < depth:
            blk = blocks[bi]
            nxt = bi + 1
            for si in blk.insts:
                if len(out) >= depth:
                    break
                srcs, dsts = _regs(si.srcs, si.dsts)
                op = si.op
                if op == LOAD or op == STORE:
                    if si.mem[0] == "stride":
                        prev = local_addr.get(si.pc, self.last_addr.get(si.pc))
                        if prev is None:
                            addr = DATA_BASE + si.mem[1] // 8 * 8
                        else:
                            addr = DATA_BASE + (prev - DATA_BASE + si.mem[2]) % ws // 8 * 8
                        local_addr[si.pc] = addr
                    else:
                        addr = DATA_BASE + rng.randrange(ws // 8) * 8
                    out.append(TraceRecord(si.pc, si.pc + 4, op, F_WRONG_PATH, srcs, dsts, addr, 3))
                    continue
                if op == ALU or op == LONG:
                    out.append(TraceRecord(si.pc, si.pc + 4, op, F_WRONG_PATH, srcs, dsts, 0, 0))
                    continue
                taken = True
                if op == COND:
                    taken = self.pred.direction(si.pc, ghist) if self.pred.kind != "oracle" \
                        else rng.random() < blk.bias
                    ghist = ((ghist << 1) | taken) & ((1 << self.pred.hist_bits) - 1)
                    nxt = blk.targets[0] if taken else bi + 1
                elif op == JMP or op == CALL:
                    nxt = blk.targets[0]
                elif op == IJMP or op == ICALL:
                    last = self.pred.last_target.get(si.pc)
                    nb = prog.block_at.get(last) if last is not None else None
                    nxt = nb if nb is not None else blk.targets[0]
                elif op == RET:
                    if not stack:
                        out.append(TraceRecord(si.pc, si.pc + 4, op, F_WRONG_PATH, srcs, dsts))
                        return out
                    nxt = stack.pop()
                if op == CALL or op == ICALL:
                    stack.append(bi + 1)
                target = blocks[nxt].start if taken else si.pc + 4
                out.append(TraceRecord(si.pc, target, op, F_WRONG_PATH | (F_TAKEN if taken else 0),
                                       srcs, dsts, 0, 0))
            bi = nxt
        return out


def generate(spec: WorkloadSpec) -> list[TraceRecord]:
    """CP stream with WP segments inserted after each producer mis-speculation."""
    spec.validate()
    prog = Program(spec)
    cp = cp_walk(prog)
    pred = EmbeddedPredictor(spec.embedded_predictor, spec.predictor_table_log2, spec.gshare_history_bits)
    rng_mix = random.Random(f"{spec.seed}:mix")
    rng_ls = random.Random(f"{spec.seed}:ls")
    last_addr: dict[int, int] = {}
    walker = WrongPathWalker(prog, pred, last_addr)
    stack: list[int] = []
    out: list[TraceRecord] = []
    n = len(cp)
    depth = spec.wp_depth_limit
    ls_p = 0.0 if spec.embedded_predictor == "oracle" else spec.ls_trigger_prob * spec.predictor_mix
    for i, rec in enumerate(cp):
        op = rec.op_class
        segment = None
        if op >= COND and op <= RET:
            if pred.mispredicts(rec):
                keep = rng_mix.random() < spec.predictor_mix
                if keep and i < n - 1:
                    taken, nxt = pred.predict(rec)
                    if op == COND and taken and not rec.taken:
                        nxt = prog.blocks[prog.term_block[rec.pc]].targets[0]
                        nxt = prog.blocks[nxt].start
                    segment = walker.walk(nxt, stack, depth, random.Random(f"{spec.seed}:wp:{i}"))
                    rec = rec._replace(flags=rec.flags | F_TRIGGER)
            pred.update(rec)
            if op == CALL or op == ICALL:
                stack.append(prog.block_at[rec.pc + 4])
            elif op == RET:
                stack.pop()
        elif op == LOAD or op == STORE:
            if op == LOAD and rng_ls.random() < ls_p and i < n - 1:
                segment = [r._replace(flags=(r.flags & ~(F_TRIGGER | F_TRIGGER_LS)) | F_WRONG_PATH)
                           for r in cp[i + 1:i + 1 + depth]]
                rec = rec._replace(flags=rec.flags | F_TRIGGER | F_TRIGGER_LS)
            last_addr[rec.pc] = rec.mem_addr
        out.append(rec)
        if segment:
            out.extend(segment)
    return out


# -- report ------------------------------------------------------------------------

@dataclass
class GeneratorReport:
    cp_records: int = 0
    wp_records: int = 0
    mispredicts: int = 0
    branch_triggers: int = 0
    ls_triggers: int = 0
    mispredict_density: float = 0.0
    mpki: float = 0.0
    segment_length_histogram: dict = field(default_factory=dict)
    code_footprint_bytes: int = 0
    code_span_bytes: int = 0
    data_footprint_bytes: int = 0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)


def describe(spec: WorkloadSpec | None, trace) -> GeneratorReport:
    rep = GeneratorReport()
    hist: Counter = Counter()
    code_lines, data_lines = set(), set()
    seg_len = None
    for rec in trace:
        if rec.flags & F_WRONG_PATH:
            rep.wp_records += 1
            seg_len += 1
            continue
        if seg_len is not None:
            hist[seg_len] += 1
            seg_len = None
        rep.cp_records += 1
        code_lines.add(rec.pc >> 6)
        if rec.mem_addr:
            data_lines.add(rec.mem_addr >> 6)
        if rec.flags & F_TRIGGER:
            rep.mispredicts += 1
            seg_len = 0
            if rec.flags & F_TRIGGER_LS:
                rep.ls_triggers += 1
            else:
                rep.branch_triggers += 1
    if seg_len is not None:
        hist[seg_len] += 1
    rep.segment_length_histogram = {str(k): hist[k] for k in sorted(hist)}
    rep.mispredict_density = rep.mispredicts / rep.cp_records if rep.cp_records else 0.0
    rep.mpki = 1000.0 * rep.mispredict_density
    rep.code_footprint_bytes = 64 * len(code_lines)
    rep.code_span_bytes = 64 * (max(code_lines) - min(code_lines) + 1) if code_lines else 0
    rep.data_footprint_bytes = 64 * len(data_lines)
    return rep


def generate_checked(spec: WorkloadSpec) -> list[TraceRecord]:
    recs = generate(spec)
    rep = check_records(recs)
    if not rep.ok:
        raise AssertionError(f"generator produced an invalid trace: {rep.violations[:3]}")
    return recs
