"""Sequence-level heuristics used for warm starts and large graphs.

Solutions are kept in staged form relative to a topological order: stage
``j`` computes the ``j``-th node of the order last, preceded by recomputations
of earlier nodes in order. Such sequences are valid in both the staged and
the unstaged model.

``reduce_peak`` repeatedly inserts the recomputation that removes the most
memory excess per unit of duration; ``improve`` runs a ruin-and-recreate
loop over windows of stages on top of it.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..evaluator import Simulation, SequenceError, simulate
from ..graph import ComputeGraph, TopoOrder


@dataclass
class StagedSequence:
    order: tuple[int, ...]
    recs: list[list[int]]  # recs[j] = sorted 1-based slots recomputed in stage j+1

    @classmethod
    def plain(cls, order: TopoOrder | Sequence[int]) -> "StagedSequence":
        nodes = order.nodes if isinstance(order, TopoOrder) else tuple(order)
        return cls(tuple(nodes), [[] for _ in nodes])

    def copy(self) -> "StagedSequence":
        return StagedSequence(self.order, [list(r) for r in self.recs])

    def flatten(self) -> list[int]:
        out = []
        for j, slots in enumerate(self.recs):
            out.extend(self.order[k - 1] for k in slots)
            out.append(self.order[j])
        return out

    def stage_starts(self) -> list[int]:
        starts, pos = [], 0
        for slots in self.recs:
            starts.append(pos)
            pos += len(slots) + 1
        return starts

    def recompute_count(self) -> int:
        return sum(len(r) for r in self.recs)


@dataclass
class Evaluated:
    seq: list[int]
    sim: Simulation | None  # None when the sequence is not executable
    peak: int
    duration: int

    @property
    def ok(self) -> bool:
        return self.sim is not None


def evaluate(g: ComputeGraph, ss: StagedSequence, caps: Sequence[int]) -> Evaluated:
    seq = ss.flatten()
    try:
        sim = simulate(g, seq, caps)
    except SequenceError:
        return Evaluated(seq, None, 1 << 62, 1 << 62)
    return Evaluated(seq, sim, sim.peak, sim.duration)


def memory_profile(g: ComputeGraph, seq: Sequence[int], until: Sequence[int]) -> np.ndarray:
    L = len(seq)
    delta = np.zeros(L + 1, dtype=np.int64)
    sizes = np.asarray([g.out_sizes[v] for v in seq], dtype=np.int64)
    np.add.at(delta, np.arange(L), sizes)
    np.add.at(delta, np.asarray(until, dtype=np.int64) + 1, -sizes)
    return np.cumsum(delta)[:L]


@dataclass
class _Candidate:
    node: int
    stage: int  # zero-based
    gain: int  # reduction of total excess
    new_peak: int
    ratio: float


def _candidates(
    g: ComputeGraph,
    ss: StagedSequence,
    ev: Evaluated,
    caps: Sequence[int],
    budget: int,
) -> list[_Candidate]:
    seq, until = ev.seq, ev.sim.retained_until
    L = len(seq)
    mem = memory_profile(g, seq, until)
    excess = np.maximum(mem - budget, 0)
    order_pos = {v: j for j, v in enumerate(ss.order, start=1)}
    starts = ss.stage_starts()
    stage_of = np.empty(L, dtype=np.int64)
    for j, st in enumerate(starts):
        stage_of[st : st + len(ss.recs[j]) + 1] = j
    counts = [0] * g.n
    for v in seq:
        counts[v] += 1

    # which consumer positions each occurrence serves; latest occurrence per node before each position
    served: list[list[int]] = [[] for _ in range(L)]
    latest = [-1] * g.n
    for k, v in enumerate(seq):
        for u in g.preds[v]:
            served[latest[u]].append(k)
        latest[v] = k
    occ_by_node: list[list[int]] = [[] for _ in range(g.n)]
    for k, v in enumerate(seq):
        occ_by_node[v].append(k)

    def latest_occ(p: int, q: int) -> int:
        best = -1
        for k in occ_by_node[p]:
            if k < q:
                best = k
            else:
                break
        return best

    out: list[_Candidate] = []
    seen = set()
    sizes, durs = g.out_sizes, g.durations
    for o in range(L):
        u = seq[o]
        if counts[u] >= caps[u] or len(served[o]) < 2 or sizes[u] == 0:
            continue
        cons = served[o]
        for c in cons[1:]:
            S = int(stage_of[c])
            if (u, S) in seen or order_pos[u] in ss.recs[S]:
                continue
            seen.add((u, S))
            slot = order_pos[u]
            q = starts[S] + sum(1 for k in ss.recs[S] if k < slot)
            if q <= o:
                continue
            before = [k for k in cons if k < q]
            new_end = before[-1] if before else o
            lo = new_end + 1
            ext = []
            for p in g.preds[u]:
                lp = latest_occ(p, q)
                if lp < 0:
                    break
                if until[lp] < q:
                    ext.append((until[lp] + 1, sizes[p]))
                    lo = min(lo, until[lp] + 1)
            else:
                lo = min(lo, q)
                window = mem[lo:q].copy()
                window[new_end + 1 - lo :] -= sizes[u]
                add = 0
                for a, sz in ext:
                    window[a - lo :] += sz
                    add += sz
                crossing = int(mem[q] - sizes[seq[q]]) + add
                new_excess = int(np.maximum(window - budget, 0).sum()) + max(crossing - budget, 0)
                gain = int(excess[lo:q].sum()) - new_excess
                new_peak = max(int(window.max()) if len(window) else 0, crossing)
                if gain <= 0:
                    continue
                out.append(_Candidate(u, S, gain, new_peak, gain / (durs[u] + 1e-9)))
    return out


def _apply(ss: StagedSequence, node: int, stage: int) -> StagedSequence:
    nxt = ss.copy()
    slot = ss.order.index(node) + 1
    nxt.recs[stage] = sorted(nxt.recs[stage] + [slot])
    return nxt


def excess_of(g: ComputeGraph, ev: Evaluated, budget: int) -> int:
    mem = memory_profile(g, ev.seq, ev.sim.retained_until)
    return int(np.maximum(mem - budget, 0).sum())


def reduce_peak(
    g: ComputeGraph,
    ss: StagedSequence,
    caps: Sequence[int],
    budget: int,
    deadline: float | None = None,
) -> tuple[StagedSequence, Evaluated]:
    """Greedily insert recomputations until the peak fits ``budget`` or no move helps."""
    ev = evaluate(g, ss, caps)
    if not ev.ok:
        raise ValueError("starting sequence is not executable")
    cur_excess = excess_of(g, ev, budget)
    while ev.peak > budget:
        if deadline is not None and time.monotonic() > deadline:
            break
        cands = _candidates(g, ss, ev, caps, budget)
        if not cands:
            break
        cands.sort(key=lambda c: (-c.ratio, -c.gain, c.node, c.stage))
        moved = False
        for c in cands[:8]:
            nxt = _apply(ss, c.node, c.stage)
            nev = evaluate(g, nxt, caps)
            if not nev.ok:
                continue
            nex = excess_of(g, nev, budget)
            if nex < cur_excess:
                ss, ev, cur_excess = nxt, nev, nex
                moved = True
                break
        if not moved:
            break
    return ss, ev


def drop_useless(
    g: ComputeGraph,
    ss: StagedSequence,
    caps: Sequence[int],
    budget: int,
    deadline: float | None = None,
) -> tuple[StagedSequence, Evaluated]:
    """Remove recomputations one at a time (costliest first) while staying within budget."""
    ev = evaluate(g, ss, caps)
    improved = True
    while improved:
        improved = False
        items = [(j, k) for j, slots in enumerate(ss.recs) for k in slots]
        items.sort(key=lambda jk: (-g.durations[ss.order[jk[1] - 1]], jk))
        for j, k in items:
            if deadline is not None and time.monotonic() > deadline:
                return ss, ev
            nxt = ss.copy()
            nxt.recs[j].remove(k)
            nev = evaluate(g, nxt, caps)
            if nev.ok and nev.peak <= budget and nev.duration <= ev.duration:
                ss, ev = nxt, nev
                improved = True
    return ss, ev


def improve(
    g: ComputeGraph,
    ss: StagedSequence,
    caps: Sequence[int],
    budget: int,
    deadline: float,
    seed: int,
    on_improve: Callable[[int, list[int]], None] | None = None,
    max_iterations: int | None = None,
    should_stop: Callable[[], bool] | None = None,
) -> tuple[StagedSequence, Evaluated]:
    """Ruin-and-recreate over windows of stages, accepting strict improvements."""
    rng = random.Random(seed)
    ss, ev = drop_useless(g, ss, caps, budget, deadline)
    if not ev.ok or ev.peak > budget:
        return ss, ev
    if on_improve is not None:
        on_improve(ev.duration, ev.seq)
    n = len(ss.order)
    it = 0
    while time.monotonic() < deadline:
        if max_iterations is not None and it >= max_iterations:
            break
        if should_stop is not None and should_stop():
            break
        it += 1
        if ss.recompute_count() == 0:
            break
        width = rng.randint(1, max(1, min(n, 4 + n // 10)))
        centre = rng.choice([j for j, r in enumerate(ss.recs) if r])
        lo = max(0, centre - rng.randint(0, width))
        hi = min(n, lo + width)
        trial = ss.copy()
        for j in range(lo, hi):
            if trial.recs[j] and rng.random() < 0.7:
                keep = [k for k in trial.recs[j] if rng.random() < 0.3]
                trial.recs[j] = keep
        tev = evaluate(g, trial, caps)
        if not tev.ok:
            continue
        if tev.peak > budget:
            trial, tev = reduce_peak(g, trial, caps, budget, deadline)
            if not tev.ok or tev.peak > budget:
                continue
        trial, tev = drop_useless(g, trial, caps, budget, deadline)
        if tev.duration < ev.duration:
            ss, ev = trial, tev
            if on_improve is not None:
                on_improve(ev.duration, ev.seq)
    return ss, ev
