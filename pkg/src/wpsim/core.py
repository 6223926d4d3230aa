"""Cycle-level out-of-order core driven by a WP-annotated trace.

Front end: BPU -> FTQ -> fetch (L1I) -> decode -> rename/dispatch.
Back end: issue queue with tag wakeup, ROB, in-order retire.

CP mode stalls the front end at every mispredict until it resolves at
execute, then charges a constant penalty.  WP mode fetches the trace's WP
segment after a mispredict, resteers from decode (unconditional direct
branches) or execute (everything else), squashes younger work, and restores
the rename map and predictor history from checkpoints.  Stages are stepped
in reverse pipeline order each cycle.
"""

from __future__ import annotations

import heapq
from collections import deque

from .bpu import BranchPredictor, Ftq, FtqEntry
from .cache import CP, WP, CacheHierarchy
from .config import CP_MODE, WP_MODE, SimConfig
from .metrics import RunStats, rob_bucket
from .trace import (BRANCH_OPS, DIRECT_UNCOND_OPS, F_TAKEN, F_TRIGGER, F_TRIGGER_LS, NO_REG,
                    TraceRecord, WpSegment, segment_view, trace_digest)

LOAD, STORE, LONG_ALU = 1, 2, 9
BLOCK_SHIFT = 6
MAX_BLOCK_INSTS = 16
INT_ARCH_LIMIT = 64          # arch ids below this rename from the int file

# mispredict resolution kinds
MIS_NONE, MIS_STALL, MIS_EXEC, MIS_DECODE = 0, 1, 2, 3
# front-end (BPU) states
FE_RUN, FE_STALL, FE_WP, FE_WP_IDLE = 0, 1, 2, 3


class SimulationAssertion(AssertionError):
    """Internal consistency failure; carries a diagnostic dump."""

    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


_REG_SHAPES: dict = {}


def _reg_shape(srcs: tuple, dsts: tuple) -> tuple:
    """Used sources, used destinations, and int/vec destination counts."""
    s = tuple(r for r in srcs if r != NO_REG)
    d = tuple(r for r in dsts if r != NO_REG)
    ni = sum(1 for r in d if r < INT_ARCH_LIMIT)
    shape = (s, d, ni, len(d) - ni)
    if len(_REG_SHAPES) < 1 << 16:
        _REG_SHAPES[(srcs, dsts)] = shape
    return shape


class Inst:
    __slots__ = ("seq", "cp_idx", "pc", "target", "op", "taken", "srcs", "dsts", "mem_addr",
                 "is_wp", "trigger_seq", "mis", "mispredicted", "pred", "bp_ckpt", "rmap_ckpt",
                 "ready", "eligible", "pdsts", "prev", "pending", "consumers",
                 "issued", "done", "squashed", "need_i", "need_v")

    def __init__(self, seq: int, rec: TraceRecord, cp_idx: int, is_wp: bool):
        self.seq = seq
        self.cp_idx = cp_idx
        self.pc = rec.pc
        self.target = rec.target
        self.op = rec.op_class
        self.taken = bool(rec.flags & F_TAKEN)
        regs = _REG_SHAPES.get((rec.src_regs, rec.dst_regs))
        if regs is None:
            regs = _reg_shape(rec.src_regs, rec.dst_regs)
        self.srcs, self.dsts, self.need_i, self.need_v = regs
        self.mem_addr = rec.mem_addr
        self.is_wp = is_wp
        self.trigger_seq = -1
        self.mis = MIS_NONE
        self.mispredicted = False
        self.pred = None
        self.bp_ckpt = None
        self.rmap_ckpt = None
        self.ready = 0
        self.eligible = 0
        self.pdsts = ()
        self.prev = ()
        self.pending = 0
        self.consumers = None
        self.issued = False
        self.done = False
        self.squashed = False


class Core:
    """One simulated core.  Build, then call ``run()`` once."""

    def __init__(self, records, config: SimConfig | None = None,
                 caches: CacheHierarchy | None = None, trace_hash: str | None = None,
                 record_retired: bool = False, fast_forward: bool = True):
        cfg = config or SimConfig()
        cfg.validate()
        self.cfg = cfg
        recs = records if isinstance(records, list) else list(records)
        self.cp, self.segs = segment_view(recs)
        self.trace_hash = trace_hash if trace_hash is not None else trace_digest(recs)
        self.wp_mode = cfg.mode == WP_MODE
        self.caches = caches if caches is not None else cfg.build_caches()
        self.bpu = BranchPredictor(cfg.bpu)
        self.ftq = Ftq(cfg.ftq_entries)
        self.now = 0
        self.seq = 0
        self.cp_pos = 0
        self.fe_state = FE_RUN
        self.bpu_resume = 0
        self.wp_recs: list = []
        self.wp_pos = 0
        self.wp_trigger: Inst | None = None
        self.fetch_busy_until = 0
        self.prefetch_backlog = False
        self.fetch_q: deque = deque()
        self.decode_q: deque = deque()
        self.rob: deque = deque()
        self.iq_count = 0
        self.lq_count = 0
        self.sq_count = 0
        self.ready_heap: list = []
        self.events: dict[int, list] = {}
        self.elig: dict[int, list] = {}
        # rename: arch id -> phys tag (-1: committed, always ready)
        self.rmap = [-1] * 256
        self.n_tags = cfg.int_phys_regs + cfg.vec_phys_regs
        self.free_int = deque(range(cfg.int_phys_regs))
        self.free_vec = deque(range(cfg.int_phys_regs, self.n_tags))
        self.producer: list = [None] * self.n_tags
        self.retired_idx: list | None = [] if record_retired else None
        self.fast_forward = fast_forward
        self.debug_scans = 0
        self.stats = RunStats()
        self._warm_cycle = 0
        self._warm_done = cfg.warmup_instructions == 0
        self._retired_total = 0
        self._lat = {0: cfg.lat_alu, LONG_ALU: cfg.lat_long_alu, STORE: cfg.lat_store}
        for op in BRANCH_OPS:
            self._lat[op] = cfg.lat_branch

    # -- driver ------------------------------------------------------------------

    def run(self) -> RunStats:
        n_cp = len(self.cp)
        debug = self.cfg.debug_checks
        while True:
            if (self._retired_total == n_cp and not self.rob and not self.fetch_q
                    and not self.decode_q and not len(self.ftq)):
                break
            self.step_cycle()
            if self.fast_forward:
                self._skip_idle()
            if debug:
                self._check_capacities()
                if self.now % 1024 == 0:
                    self._check_tag_conservation()
            if self.now > 0 and self.now - self._last_progress > 100_000:
                raise SimulationAssertion("no retirement for 100000 cycles", self.dump())
        return self.finish()

    _last_progress = 0

    def step_cycle(self) -> None:
        self.retire_stage()
        self.execute_stage()
        self.rename_dispatch()
        self.decode_stage()
        self.fetch_stage()
        self.bpu_stage()
        if self.prefetch_backlog:
            self._retry_prefetches()
        self.now += 1

    def _skip_idle(self) -> None:
        """Jump over cycles in which no stage can change state.

        Every stage is gated on a timestamp (bucket keys, ready cycles,
        resume cycles), so the next cycle with any possible activity is the
        smallest of them.  Counters that tick on idle cycles are advanced
        by the number of cycles skipped, which keeps results identical to
        stepping one cycle at a time.
        """
        t = self.now
        if self.prefetch_backlog or self.ready_heap:
            return
        rob = self.rob
        if rob and rob[0].done:
            return
        state = self.fe_state
        ftq = self.ftq
        ftq_full = ftq.full
        cand = []
        if state == FE_RUN or state == FE_WP:
            if not ftq_full and (state == FE_WP or self.cp_pos < len(self.cp)):
                if self.bpu_resume <= t:
                    return
                cand.append(self.bpu_resume)
        cfg = self.cfg
        fq = self.fetch_q
        head = ftq.head()
        if head is not None:
            if self.fetch_busy_until > t:
                cand.append(self.fetch_busy_until)
            elif head.avail_cycle < 0 or len(fq) < cfg.fetch_buffer_entries:
                return
        dq = self.decode_q
        if fq and len(dq) < cfg.decode_buffer_entries:
            if fq[0].ready <= t:
                return
            cand.append(fq[0].ready)
        rob_blocked = False
        if dq:
            r = dq[0].ready
            if r > t:
                cand.append(r)
            elif len(rob) >= cfg.rob_entries:
                rob_blocked = True
            elif not self._rename_blocked(dq[0]):
                return
        if self.events:
            cand.append(min(self.events))
        if self.elig:
            cand.append(min(self.elig))
        if not cand:
            return
        target = min(cand)
        if target <= t:
            return
        skipped = target - t
        if rob_blocked:
            self.stats.rob_full_events += skipped
        if state == FE_WP_IDLE:
            idle = target - max(t, self.bpu_resume)
            if idle > 0:
                self.stats.wp_fetch_idle_cycles += idle
        self.now = target

    def _rename_blocked(self, inst: Inst) -> bool:
        cfg = self.cfg
        if self.iq_count >= cfg.issue_entries:
            return True
        if inst.op == LOAD and self.lq_count >= cfg.load_entries:
            return True
        if inst.op == STORE and self.sq_count >= cfg.store_entries:
            return True
        return inst.need_i > len(self.free_int) or inst.need_v > len(self.free_vec)

    def finish(self) -> RunStats:
        st = self.stats
        self.caches.finalize()
        st.mode = self.cfg.mode
        st.trace_hash = self.trace_hash
        st.config_hash = self.cfg.digest()
        st.cycles = self.now - self._warm_cycle
        retired = st.retired_cp_instructions
        st.branch["mpki"] = 1000.0 * st.branch["mispredictions"] / retired if retired else 0.0
        st.rob_occupancy_at_mispredict = dict(sorted(st.rob_occupancy_at_mispredict.items(),
                                                     key=lambda kv: int(kv[0])))
        st.cache = {name: lvl.stats.to_dict() for name, lvl in self.caches.levels.items()}
        st.config = self.cfg.to_flat()
        return st

    # -- retire ---------------------------------------------------------------

    def retire_stage(self) -> None:
        rob = self.rob
        width = self.cfg.width_retire
        st = self.stats
        n = 0
        while n < width and rob:
            inst = rob[0]
            if not inst.done:
                break
            if inst.is_wp:
                raise SimulationAssertion(f"wrong-path instruction seq {inst.seq} reached ROB head",
                                          self.dump())
            op = inst.op
            if op == STORE:
                if self.caches.store(inst.mem_addr, CP, self.now) is None:
                    break
                self.sq_count -= 1
            elif op == LOAD:
                self.lq_count -= 1
            rob.popleft()
            for t in inst.prev:
                if t >= 0:
                    self._free_tag(t)
            if op in BRANCH_OPS:
                st.branch["predictions"] += 1
                if inst.mispredicted:
                    st.branch["mispredictions"] += 1
            if self.retired_idx is not None:
                self.retired_idx.append(inst.cp_idx)
            st.retired_cp_instructions += 1
            self._retired_total += 1
            n += 1
            if not self._warm_done and self._retired_total == self.cfg.warmup_instructions:
                self._reset_stats()
        if n:
            self._last_progress = self.now

    def _reset_stats(self) -> None:
        self._warm_done = True
        self._warm_cycle = self.now + 1
        self.stats = RunStats()
        self.caches.reset_stats()

    def _free_tag(self, t: int) -> None:
        (self.free_int if t < self.cfg.int_phys_regs else self.free_vec).append(t)

    # -- execute ----------------------------------------------------------------

    def execute_stage(self) -> None:
        now = self.now
        heap = self.ready_heap
        evs = self.events.pop(now, None)
        if evs:
            if len(evs) > 1:
                evs.sort(key=lambda i: i.seq)
            producer = self.producer
            for inst in evs:
                if inst.squashed:
                    continue
                inst.done = True
                for t in inst.pdsts:
                    producer[t] = None
                if inst.pred is not None:
                    # CP branches train the tables once, at resolution
                    self.bpu.update(inst.pc, inst.op, inst.pred, inst.taken, inst.target)
                if inst.consumers:
                    for c in inst.consumers:
                        if not c.squashed:
                            c.pending -= 1
                            if c.pending == 0 and c.eligible < now:
                                heapq.heappush(heap, (c.seq, c))
                    inst.consumers = None
                if inst.mis == MIS_EXEC or inst.mis == MIS_STALL:
                    self._resolve(inst)
        el = self.elig.pop(now, None)
        if el:
            for inst in el:
                if not inst.squashed and inst.pending == 0:
                    heapq.heappush(heap, (inst.seq, inst))
        if not heap:
            return
        width = self.cfg.issue_width
        caches = self.caches
        lat_of = self._lat
        events = self.events
        deferred = None
        k = 0
        while heap and k < width:
            seq, inst = heapq.heappop(heap)
            if inst.squashed or inst.issued:
                continue
            op = inst.op
            if op == LOAD:
                lat = caches.load(inst.mem_addr, WP if inst.is_wp else CP, now)
                if lat is None:
                    (deferred := deferred or []).append((seq, inst))
                    continue
            elif op == STORE and inst.is_wp and self.cfg.wp_store_address_fill:
                if caches.store(inst.mem_addr, WP, now) is None:
                    (deferred := deferred or []).append((seq, inst))
                    continue
                lat = lat_of[STORE]
            else:
                lat = lat_of[op]
            inst.issued = True
            self.iq_count -= 1
            t = now + lat
            b = events.get(t)
            if b is None:
                events[t] = [inst]
            else:
                b.append(inst)
            k += 1
        if deferred:
            for item in deferred:
                heapq.heappush(heap, item)

    def _resolve(self, inst: Inst) -> None:
        """A mispredicted instruction executed: repair and redirect the front end."""
        st = self.stats
        key = rob_bucket(len(self.rob))
        st.rob_occupancy_at_mispredict[key] = st.rob_occupancy_at_mispredict.get(key, 0) + 1
        if inst.mis == MIS_EXEC:
            self._squash_younger(inst)
            self.rmap = list(inst.rmap_ckpt)
            st.execute_resteers += 1
            penalty = self.cfg.wp_resteer_penalty_cycles
        else:
            penalty = self.cfg.cp_resteer_penalty_cycles
        self._repair_bpu(inst)
        inst.mis = MIS_NONE
        self.fe_state = FE_RUN
        self.bpu_resume = self.now + penalty
        if self.cfg.debug_checks:
            self._scan_after_resteer(inst.seq)

    def _repair_bpu(self, inst: Inst) -> None:
        self.bpu.restore(inst.bp_ckpt)
        inst.bp_ckpt = None
        if inst.op in BRANCH_OPS:
            self.bpu.speculate(inst.pc, inst.op, inst.taken)
        self.wp_recs = []
        self.wp_pos = 0
        self.wp_trigger = None

    def _squash_younger(self, trigger: Inst) -> None:
        ts = trigger.seq
        rob = self.rob
        n = 0
        while rob and rob[-1].seq > ts:
            x = rob.pop()
            x.squashed = True
            n += 1
            if not x.issued:
                self.iq_count -= 1
            if x.op == LOAD:
                self.lq_count -= 1
            elif x.op == STORE:
                self.sq_count -= 1
            for t in x.pdsts:
                self.producer[t] = None
                self._free_tag(t)
        n += self._flush_front_end(self.decode_q)
        self.stats.squashed_instructions += n

    def _flush_front_end(self, *queues) -> int:
        n = 0
        for q in (self.fetch_q,) + queues:
            for x in q:
                x.squashed = True
            n += len(q)
            q.clear()
        for e in self.ftq.flush():
            for x in e.insts[e.consumed:]:
                x.squashed = True
                n += 1
        self.fetch_busy_until = 0
        self.prefetch_backlog = False
        return n

    # -- rename / dispatch -------------------------------------------------------

    def rename_dispatch(self) -> None:
        dq = self.decode_q
        if not dq:
            return
        cfg = self.cfg
        now = self.now
        rob = self.rob
        rmap = self.rmap
        producer = self.producer
        free_int, free_vec = self.free_int, self.free_vec
        st = self.stats
        n = 0
        while n < cfg.width_decode and dq:
            inst = dq[0]
            if inst.ready > now:
                break
            if len(rob) >= cfg.rob_entries:
                st.rob_full_events += 1
                break
            if self.iq_count >= cfg.issue_entries:
                break
            op = inst.op
            if op == LOAD and self.lq_count >= cfg.load_entries:
                break
            if op == STORE and self.sq_count >= cfg.store_entries:
                break
            if inst.need_i > len(free_int) or inst.need_v > len(free_vec):
                break
            dq.popleft()
            pending = 0
            for r in inst.srcs:
                t = rmap[r]
                if t >= 0:
                    p = producer[t]
                    if p is not None:
                        if p.consumers is None:
                            p.consumers = [inst]
                        else:
                            p.consumers.append(inst)
                        pending += 1
            inst.pending = pending
            if inst.dsts:
                pd = []
                pv = []
                for r in inst.dsts:
                    t = (free_int if r < INT_ARCH_LIMIT else free_vec).popleft()
                    pv.append(rmap[r])
                    rmap[r] = t
                    producer[t] = inst
                    pd.append(t)
                inst.pdsts = pd
                inst.prev = pv
            if op in BRANCH_OPS or inst.mis:
                inst.rmap_ckpt = rmap[:]
            rob.append(inst)
            self.iq_count += 1
            if op == LOAD:
                self.lq_count += 1
            elif op == STORE:
                self.sq_count += 1
            e = now + cfg.rename_to_dispatch_cycles
            inst.eligible = e
            b = self.elig.get(e)
            if b is None:
                self.elig[e] = [inst]
            else:
                b.append(inst)
            if inst.is_wp:
                st.renamed_instructions["wp"] += 1
            else:
                st.renamed_instructions["cp"] += 1
            n += 1

    # -- decode ----------------------------------------------------------------

    def decode_stage(self) -> None:
        fq = self.fetch_q
        if not fq:
            return
        cfg = self.cfg
        now = self.now
        dq = self.decode_q
        n = 0
        while n < cfg.width_decode and fq:
            inst = fq[0]
            if inst.ready > now or len(dq) >= cfg.decode_buffer_entries:
                break
            fq.popleft()
            inst.ready = now + cfg.decode_to_rename_cycles
            dq.append(inst)
            n += 1
            if inst.mis == MIS_DECODE:
                self._decode_resteer(inst)
                break

    def _decode_resteer(self, inst: Inst) -> None:
        st = self.stats
        key = rob_bucket(len(self.rob))
        st.rob_occupancy_at_mispredict[key] = st.rob_occupancy_at_mispredict.get(key, 0) + 1
        st.squashed_instructions += self._flush_front_end()
        st.decode_resteers += 1
        self._repair_bpu(inst)
        inst.mis = MIS_NONE
        self.fe_state = FE_RUN
        self.bpu_resume = self.now + self.cfg.decode_resteer_penalty_cycles
        if self.cfg.debug_checks:
            self._scan_after_resteer(inst.seq)

    # -- fetch -----------------------------------------------------------------

    def fetch_stage(self) -> None:
        now = self.now
        if self.fetch_busy_until > now:
            return
        ftq = self.ftq
        e = ftq.head()
        if e is None:
            return
        cfg = self.cfg
        if e.avail_cycle < 0:
            lat = self.caches.ifetch(e.fetch_block_addr, WP if e.is_wp else CP, now)
            if lat is None:
                return
            e.prefetch_issued = True
            e.avail_cycle = now + lat
            if lat > self.caches.l1i.latency:
                self.fetch_busy_until = now + lat
        fq = self.fetch_q
        room = cfg.fetch_buffer_entries - len(fq)
        take = min(cfg.fetch_width, room, len(e.insts) - e.consumed)
        if take <= 0:
            return
        ready = e.avail_cycle + cfg.fetch_to_decode_cycles
        start = e.consumed
        for inst in e.insts[start:start + take]:
            inst.ready = ready
            fq.append(inst)
        e.consumed = start + take
        if e.is_wp:
            self.stats.fetched_instructions["wp"] += take
        else:
            self.stats.fetched_instructions["cp"] += take
        if e.consumed == len(e.insts):
            ftq.pop()

    # -- branch prediction / FTQ fill -----------------------------------------------

    def bpu_stage(self) -> None:
        state = self.fe_state
        if state == FE_STALL or self.now < self.bpu_resume:
            return
        if state == FE_WP_IDLE:
            self.stats.wp_fetch_idle_cycles += 1
            return
        if self.ftq.full:
            return
        if state == FE_WP:
            entry = self._build_wp_entry()
        else:
            if self.cp_pos >= len(self.cp):
                return
            entry = self._build_cp_entry()
        self.ftq.push(entry)
        if self.caches.prefetch(entry.fetch_block_addr, WP if entry.is_wp else CP, self.now) is None:
            self.prefetch_backlog = True
        else:
            entry.prefetch_issued = True

    def _retry_prefetches(self) -> None:
        pending = False
        for e in self.ftq.q:
            if not e.prefetch_issued:
                if self.caches.prefetch(e.fetch_block_addr, WP if e.is_wp else CP, self.now) is None:
                    pending = True
                    break
                e.prefetch_issued = True
        self.prefetch_backlog = pending

    def _build_cp_entry(self) -> FtqEntry:
        cp = self.cp
        n_cp = len(cp)
        bpu = self.bpu
        insts = []
        rec = cp[self.cp_pos]
        block = rec.pc >> BLOCK_SHIFT
        end_reason = "block-boundary"
        next_pc = None
        while self.cp_pos < n_cp and len(insts) < MAX_BLOCK_INSTS:
            rec = cp[self.cp_pos]
            if rec.pc >> BLOCK_SHIFT != block:
                break
            idx = self.cp_pos
            inst = Inst(self.seq, rec, idx, False)
            self.seq += 1
            self.cp_pos += 1
            insts.append(inst)
            flags = rec.flags
            ls_trigger = (flags & F_TRIGGER) and (flags & F_TRIGGER_LS)
            if rec.op_class in BRANCH_OPS:
                pred = bpu.lookup(rec.pc, rec.op_class)
                inst.pred = pred
                taken = inst.taken
                wrong = pred.taken != taken or (taken and pred.target != rec.target)
                if wrong or ls_trigger:
                    inst.bp_ckpt = bpu.history_checkpoint()
                bpu.speculate(rec.pc, rec.op_class, pred.taken)
                if ls_trigger:
                    self._start_misspeculation(inst, idx, ls=True)
                    end_reason, next_pc = "taken-branch", pred.target
                    break
                if wrong:
                    inst.mispredicted = True
                    self._start_misspeculation(inst, idx, ls=False)
                    end_reason, next_pc = "taken-branch", pred.target
                    break
                if flags & F_TRIGGER and self.wp_mode:
                    self.stats.skipped_segments += 1
                if pred.taken:
                    end_reason, next_pc = "taken-branch", pred.target
                    break
            elif ls_trigger:
                inst.bp_ckpt = bpu.history_checkpoint()
                self._start_misspeculation(inst, idx, ls=True)
                break
        if next_pc is None:
            next_pc = insts[-1].pc + 4
        return FtqEntry(block << BLOCK_SHIFT, next_pc, end_reason, insts=insts)

    def _start_misspeculation(self, inst: Inst, idx: int, ls: bool) -> None:
        seg: WpSegment | None = self.segs.get(idx) if self.wp_mode else None
        if seg is not None and (seg.trigger_kind == 1) == ls:
            if ls or inst.op not in DIRECT_UNCOND_OPS:
                inst.mis = MIS_EXEC
            else:
                inst.mis = MIS_DECODE
            self.fe_state = FE_WP
            self.wp_recs = seg.records
            self.wp_pos = 0
            self.wp_trigger = inst
        else:
            inst.mis = MIS_STALL
            self.fe_state = FE_STALL
            if self.wp_mode and not ls:
                self.stats.no_segment_mispredicts += 1

    def _build_wp_entry(self) -> FtqEntry:
        recs = self.wp_recs
        bpu = self.bpu
        trig = self.wp_trigger.seq
        insts = []
        rec = recs[self.wp_pos]
        block = rec.pc >> BLOCK_SHIFT
        end_reason = "block-boundary"
        while self.wp_pos < len(recs) and len(insts) < MAX_BLOCK_INSTS:
            rec = recs[self.wp_pos]
            if rec.pc >> BLOCK_SHIFT != block:
                break
            inst = Inst(self.seq, rec, -1, True)
            inst.trigger_seq = trig
            self.seq += 1
            self.wp_pos += 1
            insts.append(inst)
            if rec.op_class in BRANCH_OPS:
                bpu.speculate(rec.pc, rec.op_class, inst.taken)
                if inst.taken:
                    end_reason = "taken-branch"
                    break
        if self.wp_pos >= len(recs):
            self.fe_state = FE_WP_IDLE
        last = insts[-1]
        next_pc = last.target if end_reason == "taken-branch" else last.pc + 4
        return FtqEntry(block << BLOCK_SHIFT, next_pc, end_reason, is_wp=True, insts=insts)

    # -- debug checks ------------------------------------------------------------

    def _scan_after_resteer(self, trigger_seq: int) -> None:
        self.debug_scans += 1
        bad = []
        for name, items in (("fetch_q", self.fetch_q), ("decode_q", self.decode_q), ("rob", self.rob)):
            bad += [(name, x.seq) for x in items if x.seq > trigger_seq]
        for e in self.ftq.q:
            bad += [("ftq", x.seq) for x in e.insts if x.seq > trigger_seq]
        bad += [("iq", x.seq) for _, x in self.ready_heap if not x.squashed and x.seq > trigger_seq]
        for bucket in (*self.events.values(), *self.elig.values()):
            bad += [("sched", x.seq) for x in bucket if not x.squashed and x.seq > trigger_seq]
        for t in self.rmap:
            if t >= 0 and self.producer[t] is not None and self.producer[t].seq > trigger_seq:
                bad.append(("rename_map", self.producer[t].seq))
        if bad:
            raise SimulationAssertion(f"squash incomplete after resteer at seq {trigger_seq}: {bad[:8]}",
                                      self.dump())
        self._check_tag_conservation()

    def _check_tag_conservation(self) -> None:
        seen = list(self.free_int) + list(self.free_vec)
        seen += [t for t in self.rmap if t >= 0]
        for x in self.rob:
            seen += [t for t in x.prev if t >= 0]
        if len(seen) != self.n_tags or len(set(seen)) != self.n_tags:
            raise SimulationAssertion(
                f"physical register conservation broken: {len(seen)} refs, {len(set(seen))} distinct, "
                f"{self.n_tags} total", self.dump())

    def _check_capacities(self) -> None:
        cfg = self.cfg
        if (len(self.rob) > cfg.rob_entries or self.iq_count > cfg.issue_entries
                or self.lq_count > cfg.load_entries or self.sq_count > cfg.store_entries
                or len(self.ftq) > cfg.ftq_entries or len(self.fetch_q) > cfg.fetch_buffer_entries
                or len(self.decode_q) > cfg.decode_buffer_entries or self.iq_count < 0):
            raise SimulationAssertion("structure capacity exceeded", self.dump())

    def occupancy(self) -> dict:
        return {"rob": len(self.rob), "iq": self.iq_count, "lq": self.lq_count, "sq": self.sq_count,
                "ftq": len(self.ftq), "fetch_q": len(self.fetch_q), "decode_q": len(self.decode_q),
                "free_int": len(self.free_int), "free_vec": len(self.free_vec)}

    def dump(self) -> dict:
        head = self.rob[0] if self.rob else None
        return {"cycle": self.now, "cp_pos": self.cp_pos, "retired": self._retired_total,
                "fe_state": self.fe_state, "occupancy": self.occupancy(),
                "rob_head": None if head is None else
                {"seq": head.seq, "pc": hex(head.pc), "op": head.op, "wp": head.is_wp,
                 "done": head.done, "issued": head.issued, "pending": head.pending}}


def simulate(records, config: SimConfig | None = None, caches: CacheHierarchy | None = None,
             trace_hash: str | None = None) -> RunStats:
    return Core(records, config, caches, trace_hash).run()


__all__ = ["Core", "Inst", "SimulationAssertion", "simulate", "CP_MODE", "WP_MODE"]
