"""Chronological branch-and-bound over the retention-interval model.

Start variables are assigned in increasing event order: at each event the
search picks which interval starts there (a first computation before any
recomputation, lowest node id first). Retention is decided lazily: a tensor
stays live until memory at some later event forces its interval to close,
and only inclusion-minimal sets of intervals are closed. With starts
assigned in time order, time-table filtering reduces to checking the load at
the current event, and the reservoir condition reduces to requiring every
input of the computed node to be live.

A transposition table keyed on (copies used, live set[, stage pointer]) makes
the search exact and fast on small graphs; for large graphs it is anytime.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

from ..graph import ComputeGraph, TopoOrder

IncumbentCallback = Callable[[int, tuple[int, ...]], None]


class _Timeout(Exception):
    pass


@dataclass
class SearchOutcome:
    exhausted: bool
    best_cost: int | None
    best_seq: tuple[int, ...] | None
    nodes: int


def static_infeasible(g: ComputeGraph, budget: int) -> int | None:
    """A node whose output plus inputs cannot fit in ``budget``, if any."""
    for v in range(g.n):
        if g.out_sizes[v] + sum(g.out_sizes[u] for u in g.preds[v]) > budget:
            return v
    return None


class BranchAndBound:
    """Depth-first branch-and-bound minimizing total duration.

    ``order`` switches to the stage-restricted variant. With
    ``first_solution=True`` the search stops at the first feasible sequence,
    which is how the feasibility checks of phase 1 use it.
    """

    def __init__(
        self,
        g: ComputeGraph,
        caps: Sequence[int],
        budget: int,
        order: TopoOrder | None = None,
        deadline: float | None = None,
        node_limit: int | None = None,
        upper_bound: int | None = None,
        on_incumbent: IncumbentCallback | None = None,
        first_solution: bool = False,
        tolerance: int = 0,
        memo_limit: int = 2_000_000,
        should_stop: Callable[[], bool] | None = None,
    ):
        self.g = g
        self.n = g.n
        self.caps = list(caps)
        self.budget = budget
        self.order = order
        self.deadline = deadline
        self.node_limit = node_limit
        self.best_cost = upper_bound
        self.best_seq: tuple[int, ...] | None = None
        self.on_incumbent = on_incumbent
        self.first_solution = first_solution
        self.tolerance = tolerance
        self.memo_limit = memo_limit
        self.should_stop = should_stop

        self.sizes = g.out_sizes
        self.durs = g.durations
        self.pred_mask = [sum(1 << u for u in g.preds[v]) for v in range(self.n)]
        self.succs = g.succs
        self.preds = g.preds
        self.nodes = 0
        self.work = 0
        self.memo: dict = {}
        self.done = False

        self.counts = [0] * self.n
        self.live = 0
        self.live_mem = 0
        self.cost = 0
        self.first_left = sum(self.durs)
        self.missing = self.n
        self.seq: list[int] = []

    # -- helpers -----------------------------------------------------------------

    def _useful(self, u: int) -> bool:
        counts, caps = self.counts, self.caps
        return any(counts[y] < caps[y] for y in self.succs[u])

    def _obtainable_ok(self) -> bool:
        """Every uncomputed node can still get all of its inputs."""
        n, counts, caps, live = self.n, self.counts, self.caps, self.live
        memo = [0] * n  # 0 unknown, 1 yes, 2 no

        def ok(u: int) -> bool:
            st = memo[u]
            if st:
                return st == 1
            if live >> u & 1:
                memo[u] = 1
                return True
            res = counts[u] < caps[u] and all(ok(p) for p in self.preds[u])
            memo[u] = 1 if res else 2
            return res

        for v in range(n):
            if counts[v] == 0 and not all(ok(p) for p in self.preds[v]):
                return False
        return True

    def _bound(self) -> int:
        lb = self.cost + self.first_left
        extra = 0
        counts, live = self.counts, self.live
        seen = 0
        for v in range(self.n):
            if counts[v]:
                continue
            for u in self.preds[v]:
                if counts[u] and not (live >> u & 1) and not (seen >> u & 1):
                    seen |= 1 << u
                    extra += self.durs[u]
        return lb + extra

    def _minimal_drops(self, droppable: list[int], need: int) -> Iterator[int]:
        """Bitmasks of inclusion-minimal subsets of ``droppable`` freeing >= ``need``.

        Generated lazily: with many live tensors there are exponentially many.
        """
        sizes = self.sizes
        items = [u for u in droppable if sizes[u] > 0]
        suffix = [0] * (len(items) + 1)
        for j in range(len(items) - 1, -1, -1):
            suffix[j] = suffix[j + 1] + sizes[items[j]]

        def rec(k: int, mask: int, freed: int) -> Iterator[int]:
            self._check_clock()
            if freed >= need:
                # minimal iff removing any member breaks the requirement
                m = mask
                while m:
                    low = m & -m
                    if freed - sizes[low.bit_length() - 1] >= need:
                        return
                    m ^= low
                yield mask
                return
            if freed + suffix[k] < need:
                return
            for j in range(k, len(items)):
                u = items[j]
                yield from rec(j + 1, mask | (1 << u), freed + sizes[u])

        return rec(0, 0, 0)

    def _drop_order(self, u: int) -> tuple:
        # close first the tensors with fewest pending consumers, larger first
        pending = sum(1 for y in self.succs[u] if self.counts[y] == 0)
        return (pending, -self.sizes[u], u)

    # -- search ------------------------------------------------------------------

    def run(self) -> SearchOutcome:
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 4 * sum(self.caps) + 1000))
        exhausted = True
        try:
            if static_infeasible(self.g, self.budget) is None:
                if self.order is None:
                    self._dfs()
                else:
                    self._dfs_staged(1, 1)
        except _Timeout:
            exhausted = False
        finally:
            sys.setrecursionlimit(old)
        if self.done:
            exhausted = False
        return SearchOutcome(exhausted, self.best_cost, self.best_seq, self.nodes)

    def _check_clock(self) -> None:
        self.work += 1
        if self.deadline is not None and (self.work & 1023) == 0 and time.monotonic() > self.deadline:
            raise _Timeout

    def _tick(self) -> None:
        self.nodes += 1
        if self.done:
            raise _Timeout
        if self.node_limit is not None and self.nodes > self.node_limit:
            raise _Timeout
        if self.deadline is not None and (self.nodes & 255) == 0 and time.monotonic() > self.deadline:
            raise _Timeout

    def _record(self) -> None:
        if self.best_cost is None or self.cost < self.best_cost:
            self.best_cost = self.cost
            self.best_seq = tuple(self.seq)
            if self.on_incumbent is not None:
                self.on_incumbent(self.cost, self.best_seq)
            if self.first_solution or (self.should_stop is not None and self.should_stop()):
                self.done = True
                raise _Timeout

    def _prune_bound(self) -> bool:
        if self.best_cost is None:
            return False
        return self._bound() > self.best_cost - 1 - self.tolerance

    def _visit(self, key) -> bool:
        prev = self.memo.get(key)
        if prev is not None and prev <= self.cost:
            return False
        if prev is not None or len(self.memo) < self.memo_limit:
            self.memo[key] = self.cost
        return True

    def _compute(self, v: int, drop: int) -> list[int]:
        """Apply drops, compute ``v``, then close useless tensors. Returns undo info."""
        sizes = self.sizes
        dropped_mem = 0
        m = drop
        while m:
            low = m & -m
            dropped_mem += sizes[low.bit_length() - 1]
            m ^= low
        self.live &= ~drop
        self.live_mem -= dropped_mem
        if self.counts[v] == 0:
            self.first_left -= self.durs[v]
            self.missing -= 1
        self.counts[v] += 1
        self.cost += self.durs[v]
        self.seq.append(v)
        self.live |= 1 << v
        self.live_mem += sizes[v]
        # forced closes: tensors no remaining computation can consume
        forced = 0
        m = self.live
        while m:
            low = m & -m
            u = low.bit_length() - 1
            m ^= low
            if not self._useful(u):
                forced |= low
        fm = 0
        m = forced
        while m:
            low = m & -m
            fm += sizes[low.bit_length() - 1]
            m ^= low
        self.live &= ~forced
        self.live_mem -= fm
        return [drop, dropped_mem, forced, fm]

    def _undo(self, v: int, info: list[int]) -> None:
        drop, dropped_mem, forced, fm = info
        self.live |= forced
        self.live_mem += fm
        self.live &= ~(1 << v)
        self.live_mem -= self.sizes[v]
        self.seq.pop()
        self.cost -= self.durs[v]
        self.counts[v] -= 1
        if self.counts[v] == 0:
            self.first_left += self.durs[v]
            self.missing += 1
        self.live |= drop
        self.live_mem += dropped_mem

    def _drop_options(self, v: int) -> Iterable[int]:
        need = self.live_mem + self.sizes[v] - self.budget
        if need <= 0:
            return (0,)
        keep_mask = self.pred_mask[v]
        droppable = []
        m = self.live & ~keep_mask
        while m:
            low = m & -m
            droppable.append(low.bit_length() - 1)
            m ^= low
        droppable.sort(key=self._drop_order)
        return self._minimal_drops(droppable, need)

    def _can_compute(self, v: int) -> bool:
        return (self.pred_mask[v] & ~self.live) == 0

    def _branch(self, v: int, cont: Callable[[], None]) -> None:
        for drop in self._drop_options(v):
            info = self._compute(v, drop)
            cont()
            self._undo(v, info)

    def _dfs(self) -> None:
        self._tick()
        if self.missing == 0:
            self._record()
            return
        if self._prune_bound():
            return
        if not self._visit((tuple(self.counts), self.live)):
            return
        if not self._obtainable_ok():
            return
        counts, caps, live = self.counts, self.caps, self.live
        firsts = [v for v in range(self.n) if counts[v] == 0 and self._can_compute(v)]
        recs = [
            v
            for v in range(self.n)
            if 0 < counts[v] < caps[v] and not (live >> v & 1) and self._can_compute(v) and self._useful(v)
        ]
        for v in firsts + recs:
            self._branch(v, self._dfs)

    def _dfs_staged(self, stage: int, slot: int) -> None:
        self._tick()
        if stage > self.n:
            self._record()
            return
        if self._prune_bound():
            return
        if not self._visit((stage, slot, tuple(self.counts), self.live)):
            return
        if not self._obtainable_ok():
            return
        order = self.order.nodes
        anchor = order[stage - 1]
        if self._can_compute(anchor):
            self._branch(anchor, lambda: self._dfs_staged(stage + 1, 1))
        counts, caps = self.counts, self.caps
        for k in range(slot, stage):
            x = order[k - 1]
            if counts[x] < caps[x] and not (self.live >> x & 1) and self._can_compute(x) and self._useful(x):
                self._branch(x, lambda k=k: self._dfs_staged(stage, k + 1))
