"""Retention-interval decision model.

Each node ``v`` owns ``C_v`` retention intervals ``(start, end, active)`` over a
discrete event domain ``1..|D|``. The first event of an interval is the
(re)computation of ``v``; the rest of the interval is retention of its output.
This module only *describes* the model: variables, domains and constraint
families. Search lives in :mod:`rematsched.solver`, ground-truth checking in
:mod:`rematsched.evaluator`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

from .graph import ComputeGraph, TopoOrder

INT64_MAX = 2**63 - 1

Mode = Literal["unstaged", "staged"]


@dataclass(frozen=True)
class RematProblem:
    graph: ComputeGraph
    budget: int
    remat_caps: tuple[int, ...]
    mode: Mode = "unstaged"
    order: TopoOrder | None = None
    time_limit: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if isinstance(self.budget, bool) or not isinstance(self.budget, int) or self.budget < 0:
            raise ValueError(f"budget must be a nonnegative integer, got {self.budget!r}")
        if len(self.remat_caps) != self.graph.n:
            raise ValueError("remat_caps must have one entry per node")
        if any(c < 1 for c in self.remat_caps):
            raise ValueError("every remat cap must be >= 1")
        if self.mode not in ("unstaged", "staged"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "staged":
            if self.order is None or not self.order.is_valid_for(self.graph):
                raise ValueError("staged mode requires a valid topological order")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")

    @classmethod
    def create(
        cls,
        graph: ComputeGraph,
        budget: int,
        cap: int = 2,
        overrides: dict[int, int] | None = None,
        **kwargs,
    ) -> "RematProblem":
        caps = [cap] * graph.n
        for v, c in (overrides or {}).items():
            caps[v] = c
        return cls(graph, budget, tuple(caps), **kwargs)

    @property
    def staged(self) -> bool:
        return self.mode == "staged"

    def with_budget(self, budget: int) -> "RematProblem":
        return RematProblem(
            self.graph, budget, self.remat_caps, self.mode, self.order, self.time_limit, self.seed
        )


# --- event domain ------------------------------------------------------------


def stage_event(stage: int, slot: int) -> int:
    """Event index of ``slot`` (1-based) within ``stage`` (1-based)."""
    return stage * (stage - 1) // 2 + slot


def event_stage(t: int) -> tuple[int, int]:
    """Inverse of :func:`stage_event`."""
    j = 1
    while j * (j + 1) // 2 < t:
        j += 1
    return j, t - j * (j - 1) // 2


@dataclass(frozen=True)
class EventDomain:
    size: int
    order: TopoOrder | None = None

    @property
    def staged(self) -> bool:
        return self.order is not None

    def stage_of(self, t: int) -> tuple[int, int]:
        if not self.staged:
            raise ValueError("unstaged domains have no stages")
        return event_stage(t)

    def node_at(self, t: int) -> int:
        """The only node allowed to start at event ``t`` in a staged domain."""
        _, slot = self.stage_of(t)
        return self.order.nodes[slot - 1]

    @classmethod
    def for_problem(cls, p: RematProblem) -> "EventDomain":
        if p.staged:
            n = p.graph.n
            return cls(n * (n + 1) // 2, p.order)
        return cls(sum(p.remat_caps))


# --- solutions -----------------------------------------------------------------


@dataclass(frozen=True)
class IntervalSolution:
    """Values of ``start``, ``end`` and ``active`` for every (node, copy).

    Indexed ``[v][i]`` with ``i`` zero-based; event values are 1-based.
    """

    starts: tuple[tuple[int, ...], ...]
    ends: tuple[tuple[int, ...], ...]
    active: tuple[tuple[bool, ...], ...]

    def active_intervals(self):
        for v, flags in enumerate(self.active):
            for i, a in enumerate(flags):
                if a:
                    yield v, i, self.starts[v][i], self.ends[v][i]

    def objective(self, g: ComputeGraph) -> int:
        return sum(g.durations[v] * sum(flags) for v, flags in enumerate(self.active))

    def to_dict(self) -> dict:
        return {
            "starts": [list(r) for r in self.starts],
            "ends": [list(r) for r in self.ends],
            "active": [[int(a) for a in r] for r in self.active],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntervalSolution":
        return cls(
            tuple(tuple(r) for r in d["starts"]),
            tuple(tuple(r) for r in d["ends"]),
            tuple(tuple(bool(a) for a in r) for r in d["active"]),
        )


# --- model description -------------------------------------------------------


@dataclass(frozen=True)
class IntervalVar:
    node: int
    copy: int  # zero-based
    start_domain: tuple[int, ...]
    end_domain: tuple[int, int]  # inclusive bounds
    active_fixed: bool | None  # True when forced active, None when free


@dataclass(frozen=True)
class TimeRef:
    """``start`` or ``end`` of interval (node, copy), plus a constant offset."""

    which: Literal["start", "end"]
    node: int
    copy: int
    offset: int = 0

    def value(self, sol: IntervalSolution) -> int:
        src = sol.starts if self.which == "start" else sol.ends
        return src[self.node][self.copy] + self.offset

    def __str__(self) -> str:
        name = "s" if self.which == "start" else "e"
        tail = f"+{self.offset}" if self.offset else ""
        return f"{name}[{self.node},{self.copy + 1}]{tail}"


@dataclass(frozen=True)
class ReservoirEvent:
    time: TimeRef
    delta: int
    guard: tuple[int, int]  # (node, copy) whose active flag enables the event
    provider: bool  # provider events take effect after their stamped event


@dataclass(frozen=True)
class ReservoirGroup:
    edge: tuple[int, int]
    consumer_copy: int
    events: tuple[ReservoirEvent, ...]


@dataclass(frozen=True)
class ModelInstance:
    problem: RematProblem
    domain: EventDomain
    intervals: tuple[IntervalVar, ...]
    objective: tuple[tuple[int, int, int], ...]  # (coefficient, node, copy)
    capacity: int | None  # None: capacity is the peak variable (phase 1)
    reservoirs: tuple[ReservoirGroup, ...]
    same_node_pairs: tuple[tuple[int, int, int], ...]  # (node, copy, copy+1)
    all_different: bool
    first_active: tuple[int, ...]
    phase1: bool = False
    peak_var_domain: tuple[int, int] | None = None
    index: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def graph(self) -> ComputeGraph:
        return self.problem.graph

    @property
    def interval_count(self) -> int:
        return len(self.intervals)

    def reservoirs_by_edge(self) -> dict[tuple[int, int], tuple[ReservoirGroup, ...]]:
        """Reservoir constraints grouped per edge: one per consumer copy."""
        out: dict[tuple[int, int], list[ReservoirGroup]] = {}
        for grp in self.reservoirs:
            out.setdefault(grp.edge, []).append(grp)
        return {e: tuple(gs) for e, gs in out.items()}

    def var(self, v: int, i: int) -> IntervalVar:
        return self.intervals[self.index[(v, i)]]

    def phase1_objective(self, peak: int) -> int:
        """Value of ``tau = max(peak, M)`` for a solution with the given peak."""
        return max(peak, self.problem.budget)


def _overflow_guard(p: RematProblem) -> None:
    g = p.graph
    dur = sum(w * c for w, c in zip(g.durations, p.remat_caps))
    mem = sum(m * c for m, c in zip(g.out_sizes, p.remat_caps))
    if dur > INT64_MAX or mem > INT64_MAX or p.budget > INT64_MAX:
        raise OverflowError("objective or memory sums exceed the 64-bit range")


def reservoir_events(edge: tuple[int, int], i: int, caps: Sequence[int]) -> list[ReservoirEvent]:
    """Level-change events enforcing that copy ``i`` of the consumer is served.

    For edge ``(u, v)``: ``-1`` at ``s_v^i`` and ``+1`` at ``s_v^i + 1`` guarded by
    ``a_v^i``; ``+1`` at each ``s_u^j`` and ``-1`` at each ``e_u^j`` guarded by
    ``a_u^j``. Provider events take effect just after their event (a tensor
    computed at ``t`` is usable from ``t + 1`` and still usable at its end
    event), so the level stays nonnegative exactly when some active provider
    interval satisfies ``s_u^j + 1 <= s_v^i <= e_u^j``.
    """
    u, v = edge
    if not 0 <= i < caps[v]:
        raise ValueError(f"copy index {i} out of range for node {v}")
    events = [
        ReservoirEvent(TimeRef("start", v, i), -1, (v, i), False),
        ReservoirEvent(TimeRef("start", v, i, 1), +1, (v, i), False),
    ]
    events += [ReservoirEvent(TimeRef("start", u, j), +1, (u, j), True) for j in range(caps[u])]
    events += [ReservoirEvent(TimeRef("end", u, j), -1, (u, j), True) for j in range(caps[u])]
    return events


def reservoir_level_ok(group: ReservoirGroup | Sequence[ReservoirEvent], sol: IntervalSolution) -> bool:
    """Sweep the active events in time order; True iff the level never goes negative."""
    events = group.events if isinstance(group, ReservoirGroup) else group
    deltas: dict[int, int] = {}
    for ev in events:
        v, i = ev.guard
        if not sol.active[v][i]:
            continue
        t = ev.time.value(sol) + (1 if ev.provider else 0)
        deltas[t] = deltas.get(t, 0) + ev.delta
    level = 0
    for t in sorted(deltas):
        level += deltas[t]
        if level < 0:
            return False
    return True


def build_model(p: RematProblem) -> ModelInstance:
    """Construct the duration-minimizing instance for ``p``.

    In staged mode this delegates to :func:`build_staged_model`.
    """
    if p.staged:
        return build_staged_model(p)
    _overflow_guard(p)
    g, caps = p.graph, p.remat_caps
    dom = EventDomain.for_problem(p)
    full = tuple(range(1, dom.size + 1))
    intervals = []
    for v in range(g.n):
        for i in range(caps[v]):
            intervals.append(IntervalVar(v, i, full, (1, dom.size), True if i == 0 else None))
    return _assemble(p, dom, intervals, all_different=True)


def build_staged_model(p: RematProblem) -> ModelInstance:
    """Instance restricted to a fixed topological order.

    Stage ``j`` holds ``j`` events. The ``j``-th node in the order is computed
    first at the last event of stage ``j`` (event ``j(j+1)/2``), and may only be
    recomputed at slot ``j`` of later stages. Start values are pairwise
    distinct by construction, so no all-different constraint is emitted.
    """
    if not p.staged:
        raise ValueError("build_staged_model needs a problem in staged mode")
    _overflow_guard(p)
    g, caps, order = p.graph, p.remat_caps, p.order
    n = g.n
    dom = EventDomain.for_problem(p)
    intervals = []
    for v in range(g.n):
        j = order.position[v]
        first = j * (j + 1) // 2
        later = tuple(stage_event(jj, j) for jj in range(j + 1, n + 1))
        for i in range(caps[v]):
            starts = (first,) if i == 0 else later
            lo = starts[0] if starts else dom.size
            intervals.append(IntervalVar(v, i, starts, (lo, dom.size), True if i == 0 else None))
    return _assemble(p, dom, intervals, all_different=False)


def _assemble(p: RematProblem, dom: EventDomain, intervals: list[IntervalVar], all_different: bool) -> ModelInstance:
    g, caps = p.graph, p.remat_caps
    objective = tuple((g.durations[v], v, i) for v in range(g.n) for i in range(caps[v]))
    groups = tuple(
        ReservoirGroup((u, v), i, tuple(reservoir_events((u, v), i, caps)))
        for u, v in g.edges
        for i in range(caps[v])
    )
    pairs = tuple((v, i, i + 1) for v in range(g.n) for i in range(caps[v] - 1))
    index = {(iv.node, iv.copy): k for k, iv in enumerate(intervals)}
    return ModelInstance(
        problem=p,
        domain=dom,
        intervals=tuple(intervals),
        objective=objective,
        capacity=p.budget,
        reservoirs=groups,
        same_node_pairs=pairs,
        all_different=all_different,
        first_active=tuple(range(g.n)),
        index=index,
    )


def to_phase1(m: ModelInstance, budget: int | None = None) -> ModelInstance:
    """Swap the memory capacity for a peak variable and minimize ``max(peak, M)``.

    The linearized form minimizes ``tau`` subject to ``tau >= peak`` and
    ``tau >= M``; every other constraint is kept as is.
    """
    if m.phase1:
        raise ValueError("instance is already in phase-1 form")
    p = m.problem if budget is None else m.problem.with_budget(budget)
    return ModelInstance(
        problem=p,
        domain=m.domain,
        intervals=m.intervals,
        objective=(),
        capacity=None,
        reservoirs=m.reservoirs,
        same_node_pairs=m.same_node_pairs,
        all_different=m.all_different,
        first_active=m.first_active,
        phase1=True,
        peak_var_domain=(0, p.graph.total_size()),
        index=m.index,
    )


def _fmt_domain(values: tuple[int, ...]) -> str:
    if not values:
        return "{}"
    if len(values) > 1 and values == tuple(range(values[0], values[-1] + 1)):
        return f"[{values[0]}..{values[-1]}]"
    return "{" + ",".join(map(str, values)) + "}"


def dump_model(m: ModelInstance) -> str:
    """Human-readable listing of variables and constraints."""
    g = m.graph
    lines = [
        f"# {'phase-1' if m.phase1 else 'phase-2'} model, mode={m.problem.mode}, |D|={m.domain.size}",
        f"# {m.interval_count} interval triples, {len(m.reservoirs)} reservoir groups",
        "variables:",
    ]
    for iv in m.intervals:
        act = "1" if iv.active_fixed else "{0,1}"
        lines.append(
            f"  s[{iv.node},{iv.copy + 1}] in {_fmt_domain(iv.start_domain)}  "
            f"e[{iv.node},{iv.copy + 1}] in [{iv.end_domain[0]}..{iv.end_domain[1]}]  "
            f"a[{iv.node},{iv.copy + 1}] in {act}"
        )
    if m.phase1:
        lo, hi = m.peak_var_domain
        lines.append(f"  Mvar in [{lo}..{hi}]  tau >= Mvar, tau >= {m.problem.budget}")
        lines.append("minimize tau")
    else:
        terms = " + ".join(f"{w}*a[{v},{i + 1}]" for w, v, i in m.objective)
        lines.append(f"minimize {terms}")
    lines.append("constraints:")
    lines.append("  s <= e for every interval")
    for v, i, k in m.same_node_pairs:
        lines.append(f"  e[{v},{i + 1}] <= s[{v},{k + 1}]")
    cap = "Mvar" if m.capacity is None else str(m.capacity)
    demands = ", ".join(f"{g.out_sizes[iv.node]}" for iv in m.intervals)
    lines.append(f"  cumulative(demands=[{demands}], capacity={cap})")
    for grp in m.reservoirs:
        evs = ", ".join(f"{ev.delta:+d}@{ev.time}" for ev in grp.events)
        u, v = grp.edge
        lines.append(f"  reservoir edge ({u},{v}) copy {grp.consumer_copy + 1}: {evs}; min level 0")
    if m.all_different:
        lines.append("  alldifferent(active starts)")
    lines.append("  " + ", ".join(f"a[{v},1] = 1" for v in m.first_active))
    return "\n".join(lines) + "\n"
