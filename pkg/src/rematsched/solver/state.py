"""Domain-level search state and the two propagators over it.

A :class:`SearchState` holds, for every interval ``(v, i)``, the set of
possible start events, bounds on the end event, and the activity flag
(``None`` while undecided). Propagators never mutate their input; they return
a :class:`PruneResult` carrying a tightened copy.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from ..model import ModelInstance

Key = tuple[int, int]


@dataclass
class SearchState:
    capacity: int | None
    demands: dict[Key, int]
    starts: dict[Key, frozenset[int]]
    end_lo: dict[Key, int]
    end_hi: dict[Key, int]
    active: dict[Key, bool | None]
    horizon: int = 0

    @classmethod
    def from_model(cls, m: ModelInstance) -> "SearchState":
        g = m.graph
        st = cls(
            capacity=m.capacity,
            demands={},
            starts={},
            end_lo={},
            end_hi={},
            active={},
            horizon=m.domain.size,
        )
        for iv in m.intervals:
            k = (iv.node, iv.copy)
            st.demands[k] = g.out_sizes[iv.node]
            st.starts[k] = frozenset(iv.start_domain)
            st.end_lo[k], st.end_hi[k] = iv.end_domain
            st.active[k] = iv.active_fixed
            if not iv.start_domain:
                st.active[k] = False
        return st

    @classmethod
    def from_solution(cls, m: ModelInstance, sol) -> "SearchState":
        """Fully decided state holding the values of an :class:`IntervalSolution`."""
        st = cls.from_model(m)
        for k in st.starts:
            v, i = k
            st.fix(k, sol.starts[v][i], sol.ends[v][i], bool(sol.active[v][i]))
        return st

    def copy(self) -> "SearchState":
        return copy.copy(self)._detach()

    def _detach(self) -> "SearchState":
        self.starts = dict(self.starts)
        self.end_lo = dict(self.end_lo)
        self.end_hi = dict(self.end_hi)
        self.active = dict(self.active)
        return self

    def fix(self, key: Key, start: int, end: int, active: bool = True) -> None:
        self.starts[key] = frozenset((start,))
        self.end_lo[key] = self.end_hi[key] = end
        self.active[key] = active

    def is_fixed_start(self, key: Key) -> bool:
        return len(self.starts[key]) == 1

    def compulsory(self, key: Key) -> tuple[int, int] | None:
        """Events every completion of an active interval is sure to cover."""
        dom = self.starts[key]
        if not dom:
            return None
        lst, est = max(dom), min(dom)
        hi = max(self.end_lo[key], est)
        if lst > hi:
            return None
        return lst, hi


@dataclass
class PruneResult:
    failed: bool
    state: SearchState
    reason: str | None = None
    pruned: int = 0
    changed: list = field(default_factory=list)


def _profile(state: SearchState, horizon: int) -> list[int]:
    prof = [0] * (horizon + 2)
    for k, a in state.active.items():
        if a is not True:
            continue
        cp = state.compulsory(k)
        if cp is None:
            continue
        d = state.demands[k]
        for t in range(cp[0], min(cp[1], horizon) + 1):
            prof[t] += d
    return prof


def propagate_cumulative(state: SearchState, m: ModelInstance | None = None) -> PruneResult:
    """Time-table filtering for the memory constraint.

    Builds the profile of compulsory parts of the active intervals, fails on
    overload, then removes start values (and lowers end bounds) of intervals
    that would push a saturated event over capacity.
    """
    cap = m.capacity if m is not None else state.capacity
    st = state.copy()
    if cap is None:
        return PruneResult(False, st)
    horizon = max(
        [state.horizon]
        + [max(d) for d in st.starts.values() if d]
        + list(st.end_hi.values())
    )
    pruned = 0
    changed = []
    while True:
        prof = _profile(st, horizon)
        for t in range(1, horizon + 1):
            if prof[t] > cap:
                return PruneResult(True, st, f"memory profile {prof[t]} > {cap} at event {t}", pruned)
        progress = False
        for k in sorted(st.starts):
            a = st.active[k]
            if a is False:
                continue
            d = st.demands[k]
            own = st.compulsory(k) if a is True else None

            def load(t: int) -> int:
                mine = d if own is not None and own[0] <= t <= own[1] else 0
                return prof[t] - mine + d

            keep = []
            for s in sorted(st.starts[k]):
                hi = max(s, st.end_lo[k])
                if all(load(t) <= cap for t in range(s, min(hi, horizon) + 1)):
                    keep.append(s)
            if len(keep) < len(st.starts[k]):
                pruned += len(st.starts[k]) - len(keep)
                st.starts[k] = frozenset(keep)
                changed.append(k)
                progress = True
            if not keep:
                if a is True:
                    return PruneResult(True, st, f"interval {k} has no feasible start", pruned)
                st.active[k] = False
                continue
            lst = max(keep)
            new_hi = st.end_hi[k]
            for t in range(lst, st.end_hi[k] + 1):
                if load(t) > cap:
                    new_hi = t - 1
                    break
            if new_hi < st.end_hi[k]:
                st.end_hi[k] = new_hi
                pruned += 1
                changed.append(k)
                progress = True
                if new_hi < max(st.end_lo[k], min(keep)):
                    if a is True:
                        return PruneResult(True, st, f"interval {k} cannot end in time", pruned)
                    st.active[k] = False
        if not progress:
            return PruneResult(False, st, None, pruned, changed)


def check_reservoir(state: SearchState, m: ModelInstance) -> PruneResult:
    """Provider-availability check for every edge and consumer copy.

    For a consumer copy with a decided start ``t``, some provider copy that
    is not ruled out must be able to start before ``t`` and end at or after
    ``t``. With exactly one such provider left, it is forced active and its
    domains are narrowed accordingly.
    """
    st = state.copy()
    caps = m.problem.remat_caps
    pruned = 0
    changed = []
    for grp in m.reservoirs:
        u, v = grp.edge
        ck = (v, grp.consumer_copy)
        if st.active[ck] is False or not st.is_fixed_start(ck):
            continue
        (t,) = st.starts[ck]
        cands = []
        for j in range(caps[u]):
            pk = (u, j)
            if st.active[pk] is False:
                continue
            if st.end_hi[pk] < t:
                continue
            if not any(s + 1 <= t for s in st.starts[pk]):
                continue
            cands.append(pk)
        if not cands:
            if st.active[ck] is True:
                return PruneResult(True, st, f"edge {grp.edge}: no provider can serve copy {ck} at {t}", pruned)
            st.active[ck] = False
            pruned += 1
            changed.append(ck)
            continue
        if len(cands) == 1 and st.active[ck] is True:
            pk = cands[0]
            narrowed = frozenset(s for s in st.starts[pk] if s + 1 <= t)
            if st.active[pk] is None:
                st.active[pk] = True
                pruned += 1
            if narrowed != st.starts[pk]:
                st.starts[pk] = narrowed
                pruned += 1
            if st.end_lo[pk] < t:
                st.end_lo[pk] = t
                pruned += 1
            changed.append(pk)
    return PruneResult(False, st, None, pruned, changed)
