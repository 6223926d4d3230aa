"""Branch prediction unit: TAGE-lite, ITTAGE-lite, BTB, RAS and the FTQ.

Tables are trained non-speculatively when a branch resolves (``update``); global/path history and
the RAS are speculated at ``predict`` time and repaired with
``history_checkpoint`` / ``restore``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .trace import CALL_OPS, INDIRECT_OPS

COND, UNCOND_DIRECT, UNCOND_INDIRECT, CALL_DIRECT, CALL_INDIRECT, RETURN = 3, 4, 5, 6, 7, 8
INSTR_BYTES = 4
FETCH_BLOCK_BYTES = 64


def geometric_lengths(n: int, l1: int, ratio: float) -> list[int]:
    out = []
    for i in range(n):
        h = int(l1 * ratio ** i)
        if out and h <= out[-1]:
            h = out[-1] + 1
        out.append(h)
    return out


def fold(value: int, length: int, width: int) -> int:
    """XOR the low ``length`` bits of ``value`` down into ``width`` bits."""
    if width <= 0:
        return 0
    x = value & ((1 << length) - 1)
    mask = (1 << width) - 1
    f = 0
    while x:
        f ^= x & mask
        x >>= width
    return f


class FoldedHistory:
    """Incrementally maintained ``fold(history, length, width)``."""

    __slots__ = ("comp", "length", "width", "out_pos", "mask")

    def __init__(self, length: int, width: int):
        self.comp = 0
        self.length = length
        self.width = width
        self.out_pos = length % width if width else 0
        self.mask = (1 << width) - 1

    def push(self, new_bit: int, outgoing_bit: int) -> None:
        if not self.width:
            return
        c = (self.comp << 1) | new_bit
        c ^= outgoing_bit << self.out_pos
        c ^= c >> self.width
        self.comp = c & self.mask


@dataclass
class BpuConfig:
    bimodal_log2: int = 14
    tage_tables: int = 8
    tage_table_log2: int = 11
    tage_tag_bits: int = 11
    tage_min_hist: int = 4
    tage_hist_ratio: float = 1.7
    tage_u_reset_period: int = 1 << 18
    path_hist_bits: int = 16
    ittage_tables: int = 4
    ittage_table_log2: int = 9
    ittage_tag_bits: int = 11
    ittage_min_hist: int = 8
    ittage_hist_ratio: float = 2.5
    btb_entries: int = 16384
    btb_ways: int = 8
    ras_depth: int = 32


@dataclass
class Prediction:
    taken: bool
    target: int
    source: str = "none"
    # TAGE bookkeeping captured at predict time so update() uses the same indices.
    provider: int = -1
    alt_taken: bool = False
    indices: tuple = ()
    tags: tuple = ()
    bim_index: int = 0
    it_provider: int = -1
    it_indices: tuple = ()
    it_tags: tuple = ()


class HistoryState:
    """Global + path history with folded copies for every tagged table.

    Folded registers for all tables live in one flat list ``comps``;
    ``groups[t]`` lists the positions belonging to table ``t``.  Each
    register follows the same update as ``FoldedHistory``.
    """

    def __init__(self, lengths: list[int], widths: list[tuple[int, ...]], path_bits: int):
        self.max_len = max(lengths, default=0)
        self.ghist = 0
        self.phist = 0
        self.path_bits = path_bits
        self.groups = []
        self._params = []
        for L, ws in zip(lengths, widths):
            grp = []
            for w in ws:
                grp.append(len(self._params))
                self._params.append((L, L % w if w else 0, w, (1 << w) - 1))
            self.groups.append(grp)
        self.comps = [0] * len(self._params)

    @property
    def folds(self) -> list[list[int]]:
        return [[self.comps[i] for i in grp] for grp in self.groups]

    def push(self, taken: bool, pc: int) -> None:
        bit = 1 if taken else 0
        g = (self.ghist << 1) | bit
        comps = self.comps
        i = 0
        for L, pos, w, mask in self._params:
            if w:
                c = (comps[i] << 1) | bit
                c ^= ((g >> L) & 1) << pos
                c ^= c >> w
                comps[i] = c & mask
            i += 1
        self.ghist = g & ((1 << (self.max_len + 1)) - 1)
        self.phist = ((self.phist << 1) | ((pc >> 2) & 1)) & ((1 << self.path_bits) - 1)

    def snapshot(self) -> tuple:
        return (self.ghist, self.phist, tuple(self.comps))

    def load(self, snap: tuple) -> None:
        self.ghist, self.phist, comps = snap
        self.comps = list(comps)


class TageLite:
    """Bimodal base plus geometric-history tagged tables (no use-alt, no loop/SC)."""

    def __init__(self, n_tables: int = 8, table_log2: int = 11, tag_bits: int = 11,
                 bimodal_log2: int = 14, min_hist: int = 4, ratio: float = 1.7,
                 path_bits: int = 16, u_reset_period: int = 1 << 18):
        self.n = n_tables
        self.log2 = table_log2
        self.tag_bits = tag_bits
        self.bim_log2 = bimodal_log2
        self.lengths = geometric_lengths(n_tables, min_hist, ratio)
        self.path_bits = path_bits
        self.bimodal = [1] * (1 << bimodal_log2)     # 2-bit, weakly not-taken
        size = 1 << table_log2
        self.tags = [[-1] * size for _ in range(n_tables)]
        self.ctr = [[0] * size for _ in range(n_tables)]   # 3-bit signed, -4..3
        self.useful = [[0] * size for _ in range(n_tables)]
        self.u_reset_period = u_reset_period
        self.n_updates = 0
        self._ph_cache: dict[int, tuple] = {}

    # fold widths per table: index, tag, tag-1
    def fold_widths(self) -> list[tuple[int, ...]]:
        return [(self.log2, self.tag_bits, self.tag_bits - 1) for _ in range(self.n)]

    def storage_bits(self) -> int:
        return (2 << self.bim_log2) + self.n * (1 << self.log2) * (self.tag_bits + 3 + 2)

    def compute(self, pc: int, hist: HistoryState):
        p = pc >> 2
        idx = []
        tags = []
        mask = (1 << self.log2) - 1
        tmask = (1 << self.tag_bits) - 1
        phist = hist.phist
        phs = self._ph_cache.get(phist)
        if phs is None:
            phs = self._ph_cache[phist] = tuple(
                fold(phist, min(L, self.path_bits), self.log2) for L in self.lengths)
        comps = hist.comps
        for t in range(self.n):
            j = 3 * t
            idx.append((p ^ (p >> self.log2) ^ comps[j] ^ phs[t]) & mask)
            tags.append((p ^ comps[j + 1] ^ (comps[j + 2] << 1)) & tmask)
        return tuple(idx), tuple(tags)

    def predict(self, pc: int, hist: HistoryState):
        bidx = (pc >> 2) & ((1 << self.bim_log2) - 1)
        base = self.bimodal[bidx] >= 2
        idx, tags = self.compute(pc, hist)
        provider = -1
        alt = -1
        for t in range(self.n - 1, -1, -1):
            if self.tags[t][idx[t]] == tags[t]:
                if provider < 0:
                    provider = t
                else:
                    alt = t
                    break
        alt_taken = self.ctr[alt][idx[alt]] >= 0 if alt >= 0 else base
        taken = self.ctr[provider][idx[provider]] >= 0 if provider >= 0 else base
        return taken, provider, alt_taken, idx, tags, bidx

    def update(self, taken: bool, pred: Prediction) -> None:
        provider = pred.provider
        idx, tags = pred.indices, pred.tags
        if provider >= 0:
            i = idx[provider]
            c = self.ctr[provider]
            c[i] = min(c[i] + 1, 3) if taken else max(c[i] - 1, -4)
            if pred.taken != pred.alt_taken:
                u = self.useful[provider]
                u[i] = min(u[i] + 1, 3) if pred.taken == taken else max(u[i] - 1, 0)
        else:
            b = pred.bim_index
            self.bimodal[b] = min(self.bimodal[b] + 1, 3) if taken else max(self.bimodal[b] - 1, 0)
        if pred.taken != taken and provider < self.n - 1:
            allocated = False
            for t in range(provider + 1, self.n):
                if self.useful[t][idx[t]] == 0:
                    self.tags[t][idx[t]] = tags[t]
                    self.ctr[t][idx[t]] = 0 if taken else -1
                    allocated = True
                    break
            if not allocated:
                for t in range(provider + 1, self.n):
                    u = self.useful[t]
                    u[idx[t]] = max(u[idx[t]] - 1, 0)
        self.n_updates += 1
        if self.u_reset_period and self.n_updates % self.u_reset_period == 0:
            for u in self.useful:
                for i in range(len(u)):
                    u[i] >>= 1


class IttageLite:
    """Indirect target predictor: tagged tables with target + 2-bit confidence."""

    def __init__(self, n_tables: int = 4, table_log2: int = 9, tag_bits: int = 11,
                 min_hist: int = 8, ratio: float = 2.5):
        self.n = n_tables
        self.log2 = table_log2
        self.tag_bits = tag_bits
        self.lengths = geometric_lengths(n_tables, min_hist, ratio)
        size = 1 << table_log2
        self.tags = [[-1] * size for _ in range(n_tables)]
        self.targets = [[0] * size for _ in range(n_tables)]
        self.conf = [[0] * size for _ in range(n_tables)]
        self.useful = [[0] * size for _ in range(n_tables)]

    def fold_widths(self):
        return [(self.log2, self.tag_bits) for _ in range(self.n)]

    def storage_bits(self) -> int:
        # targets stored as 32-bit offsets
        return self.n * (1 << self.log2) * (self.tag_bits + 32 + 2 + 1)

    def compute(self, pc: int, comps, base: int = 0):
        """Indices and tags; table ``t`` reads ``comps[base + 2t]`` and the next slot."""
        p = pc >> 2
        mask = (1 << self.log2) - 1
        tmask = (1 << self.tag_bits) - 1
        idx = tuple((p ^ (p >> self.log2) ^ comps[base + 2 * t]) & mask for t in range(self.n))
        tags = tuple(((p >> 1) ^ comps[base + 2 * t + 1]) & tmask for t in range(self.n))
        return idx, tags

    def predict(self, pc: int, comps, base: int = 0):
        idx, tags = self.compute(pc, comps, base)
        for t in range(self.n - 1, -1, -1):
            if self.tags[t][idx[t]] == tags[t]:
                return self.targets[t][idx[t]], t, idx, tags
        return None, -1, idx, tags

    def update(self, target: int, pred: Prediction) -> None:
        t = pred.it_provider
        idx, tags = pred.it_indices, pred.it_tags
        if t >= 0:
            i = idx[t]
            if self.targets[t][i] == target:
                self.conf[t][i] = min(self.conf[t][i] + 1, 3)
                self.useful[t][i] = 1
            elif self.conf[t][i] > 0:
                self.conf[t][i] -= 1
            else:
                self.targets[t][i] = target
                self.useful[t][i] = 0
        if pred.target != target:
            for j in range(t + 1, self.n):
                if self.useful[j][idx[j]] == 0:
                    self.tags[j][idx[j]] = tags[j]
                    self.targets[j][idx[j]] = target
                    self.conf[j][idx[j]] = 0
                    return
            for j in range(t + 1, self.n):
                self.useful[j][idx[j]] = 0


class Btb:
    """Set-associative BTB with LRU; each set is a dict in LRU order."""

    def __init__(self, entries: int = 16384, ways: int = 8):
        if entries % ways:
            raise ValueError("btb entries must be a multiple of ways")
        self.ways = ways
        self.n_sets = entries // ways
        self.sets = [dict() for _ in range(self.n_sets)]

    def _locate(self, pc: int):
        p = pc >> 2
        return self.sets[p % self.n_sets], p // self.n_sets

    def lookup(self, pc: int):
        s, tag = self._locate(pc)
        hit = s.get(tag)
        if hit is not None:
            del s[tag]
            s[tag] = hit
        return hit

    def update(self, pc: int, target: int, op_class: int) -> None:
        s, tag = self._locate(pc)
        if tag in s:
            del s[tag]
        elif len(s) >= self.ways:
            del s[next(iter(s))]
        s[tag] = (target, op_class)


class ReturnAddressStack:
    """Circular RAS: overflow overwrites the oldest entry, underflow predicts nothing."""

    def __init__(self, depth: int = 32):
        self.depth = depth
        self.entries = [0] * depth
        self.top = -1       # index of top entry
        self.count = 0

    def push(self, addr: int) -> None:
        self.top = (self.top + 1) % self.depth
        self.entries[self.top] = addr
        self.count = min(self.count + 1, self.depth)

    def pop(self):
        if self.count == 0:
            return None
        addr = self.entries[self.top]
        self.top = (self.top - 1) % self.depth
        self.count -= 1
        return addr

    def peek(self):
        return self.entries[self.top] if self.count else None

    def snapshot(self) -> tuple:
        return (self.top, self.count, self.entries[self.top] if self.top >= 0 else 0)

    def load(self, snap: tuple) -> None:
        self.top, self.count, top_val = snap
        if self.top >= 0:
            self.entries[self.top] = top_val


class StaleCheckpoint(Exception):
    pass


class BranchPredictor:
    """Direction + target prediction for every branch class."""

    def __init__(self, cfg: BpuConfig | None = None):
        cfg = cfg or BpuConfig()
        self.cfg = cfg
        self.tage = TageLite(cfg.tage_tables, cfg.tage_table_log2, cfg.tage_tag_bits,
                             cfg.bimodal_log2, cfg.tage_min_hist, cfg.tage_hist_ratio,
                             cfg.path_hist_bits, cfg.tage_u_reset_period)
        self.ittage = IttageLite(cfg.ittage_tables, cfg.ittage_table_log2, cfg.ittage_tag_bits,
                                 cfg.ittage_min_hist, cfg.ittage_hist_ratio)
        lengths = self.tage.lengths + self.ittage.lengths
        widths = self.tage.fold_widths() + self.ittage.fold_widths()
        self.hist = HistoryState(lengths, widths, cfg.path_hist_bits)
        self._it_base = 3 * self.tage.n
        self.btb = Btb(cfg.btb_entries, cfg.btb_ways)
        self.ras = ReturnAddressStack(cfg.ras_depth)
        self._ckpt_seq = 0
        self._ckpts: dict[int, tuple] = {}

    def predict(self, pc: int, op_class: int, trace_outcome=None) -> Prediction:
        """Predict a branch and speculatively apply its effect on history and RAS.

        ``trace_outcome`` is accepted for interface symmetry with the trace
        and is never consulted.
        """
        pred = self.lookup(pc, op_class)
        self.speculate(pc, op_class, pred.taken)
        return pred

    def lookup(self, pc: int, op_class: int) -> Prediction:
        """Prediction without any speculative state change."""
        fall = pc + INSTR_BYTES
        if op_class == COND:
            taken, provider, alt, idx, tags, bidx = self.tage.predict(pc, self.hist)
            target = fall
            if taken:
                hit = self.btb.lookup(pc)
                if hit is None:
                    taken = False
                else:
                    target = hit[0]
            pred = Prediction(taken, target, "tage" if provider >= 0 else "bimodal",
                              provider, alt, idx, tags, bidx)
        elif op_class == RETURN:
            addr = self.ras.peek()
            pred = Prediction(addr is not None, addr if addr is not None else fall,
                              "ras" if addr is not None else "none")
        elif op_class in INDIRECT_OPS:
            tgt, t, idx, tags = self.ittage.predict(pc, self.hist.comps, self._it_base)
            src = "ittage"
            if tgt is None:
                hit = self.btb.lookup(pc)
                tgt, src = (hit[0], "btb") if hit is not None else (None, "none")
            pred = Prediction(tgt is not None, tgt if tgt is not None else fall, src,
                              it_provider=t, it_indices=idx, it_tags=tags)
        else:
            hit = self.btb.lookup(pc)
            pred = Prediction(hit is not None, hit[0] if hit is not None else fall,
                              "btb" if hit is not None else "none")
        return pred

    def speculate(self, pc: int, op_class: int, taken: bool) -> None:
        """Apply a branch's history/RAS effect for the given direction."""
        self.hist.push(taken, pc)
        if op_class in CALL_OPS:
            self.ras.push(pc + INSTR_BYTES)
        elif op_class == RETURN:
            self.ras.pop()

    def update(self, pc: int, op_class: int, pred: Prediction, taken: bool, target: int) -> None:
        """Train tables with the resolved outcome (non-speculative)."""
        if op_class == COND:
            self.tage.update(taken, pred)
        elif op_class in INDIRECT_OPS:
            self.ittage.update(target, pred)
        if taken and op_class != RETURN:
            self.btb.update(pc, target, op_class)

    def history_checkpoint(self) -> int:
        self._ckpt_seq += 1
        self._ckpts[self._ckpt_seq] = (self.hist.snapshot(), self.ras.snapshot())
        return self._ckpt_seq

    def restore(self, token: int) -> None:
        snap = self._ckpts.get(token)
        if snap is None:
            raise StaleCheckpoint(f"checkpoint {token} is stale")
        self.hist.load(snap[0])
        self.ras.load(snap[1])
        # younger checkpoints describe a squashed future
        for k in [k for k in self._ckpts if k > token]:
            del self._ckpts[k]
        del self._ckpts[token]

    def discard(self, token: int) -> None:
        self._ckpts.pop(token, None)


class FtqFull(Exception):
    pass


@dataclass
class FtqEntry:
    fetch_block_addr: int
    predicted_target: int
    end_reason: str = "block-boundary"
    prefetch_issued: bool = False
    is_wp: bool = False
    insts: list = field(default_factory=list)
    # fetch-stage progress
    avail_cycle: int = -1
    consumed: int = 0


class Ftq:
    def __init__(self, capacity: int = 24):
        self.capacity = capacity
        self.q: deque = deque()
        self.pushes = 0
        self.pops = 0
        self.flushed = 0

    def __len__(self) -> int:
        return len(self.q)

    @property
    def full(self) -> bool:
        return len(self.q) >= self.capacity

    def push(self, entry) -> int:
        if len(self.q) >= self.capacity:
            raise FtqFull("FTQ full")
        self.q.append(entry)
        self.pushes += 1
        return len(self.q)

    def head(self):
        return self.q[0] if self.q else None

    def pop(self):
        self.pops += 1
        return self.q.popleft()

    def flush(self) -> list:
        out = list(self.q)
        self.q.clear()
        self.flushed += len(out)
        return out
