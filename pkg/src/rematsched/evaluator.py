"""Solver-independent ground truth.

Everything here works either on plain node sequences or on raw
:class:`IntervalSolution` values, and deliberately shares no code with the
search propagators in :mod:`rematsched.solver`.
"""

from __future__ import annotations

import bisect
import enum
import json
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .graph import ComputeGraph
from .model import EventDomain, IntervalSolution, RematProblem, stage_event

BRUTE_FORCE_MAX_INTERVALS = 14


class ViolationKind(str, enum.Enum):
    INTERVAL_ORDER = "INTERVAL_ORDER"
    SAME_NODE_OVERLAP = "SAME_NODE_OVERLAP"
    MEMORY_EXCEEDED = "MEMORY_EXCEEDED"
    PRECEDENCE_UNSERVED = "PRECEDENCE_UNSERVED"
    START_COLLISION = "START_COLLISION"
    FIRST_INACTIVE = "FIRST_INACTIVE"
    OUT_OF_DOMAIN = "OUT_OF_DOMAIN"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    entities: tuple
    event: int | None = None

    def __str__(self) -> str:
        at = f" at event {self.event}" if self.event is not None else ""
        return f"{self.kind.value}{at}: {self.entities}"


class SequenceError(ValueError):
    """A node sequence cannot be executed."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


class Simulation(NamedTuple):
    peak: int
    duration: int
    retained_until: tuple[int, ...]  # 0-based position of last use per occurrence


def simulate(g: ComputeGraph, seq: Sequence[int], caps: Sequence[int] | None = None) -> Simulation:
    """Minimal-memory evaluation of a node sequence.

    Every consumer occurrence reads each input from the most recent earlier
    occurrence of that predecessor; an occurrence's tensor is freed right
    after the last consumer it serves (or after its own event if it serves
    none).
    """
    if not seq:
        raise ValueError("sequence must be nonempty")
    n = g.n
    latest = [-1] * n
    counts = [0] * n
    until = list(range(len(seq)))
    preds, sizes, durs = g.preds, g.out_sizes, g.durations
    duration = 0
    for k, v in enumerate(seq):
        counts[v] += 1
        if caps is not None and counts[v] > caps[v]:
            raise SequenceError("CAP_EXCEEDED", f"node {g.names[v]!r} appears more than {caps[v]} times")
        for u in preds[v]:
            src = latest[u]
            if src < 0:
                raise SequenceError(
                    "PRECEDENCE_UNSERVED",
                    f"node {g.names[v]!r} at position {k} needs {g.names[u]!r} which was never computed",
                )
            until[src] = k
        latest[v] = k
        duration += durs[v]
    delta = [0] * (len(seq) + 1)
    for k, v in enumerate(seq):
        delta[k] += sizes[v]
        delta[until[k] + 1] -= sizes[v]
    live = peak = 0
    for k in range(len(seq)):
        live += delta[k]
        if live > peak:
            peak = live
    return Simulation(peak, duration, tuple(until))


# --- schedules -------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleEvent:
    node: int
    position: int  # 1-based index in the schedule
    retained_until: int  # 1-based position through which the output is held


@dataclass(frozen=True)
class Schedule:
    events: tuple[ScheduleEvent, ...]
    peak_memory: int
    total_duration: int

    @property
    def sequence(self) -> tuple[int, ...]:
        return tuple(e.node for e in self.events)


def _peak_of_horizons(g: ComputeGraph, nodes: Sequence[int], until: Sequence[int]) -> int:
    delta = [0] * (len(nodes) + 2)
    for k, (v, u) in enumerate(zip(nodes, until), start=1):
        delta[k] += g.out_sizes[v]
        delta[u + 1] -= g.out_sizes[v]
    live = peak = 0
    for k in range(1, len(nodes) + 1):
        live += delta[k]
        peak = max(peak, live)
    return peak


def schedule_from_sequence(g: ComputeGraph, seq: Sequence[int], caps: Sequence[int] | None = None) -> Schedule:
    sim = simulate(g, seq, caps)
    events = tuple(ScheduleEvent(v, k + 1, sim.retained_until[k] + 1) for k, v in enumerate(seq))
    return Schedule(events, sim.peak, sim.duration)


def decode_schedule(sol: IntervalSolution, p: RematProblem) -> Schedule:
    """Turn a valid interval solution into an ordered compute schedule."""
    bad = validate(sol, p)
    if bad:
        raise ValueError(f"refusing to decode an invalid solution: {bad[0]}")
    items = sorted((s, e, v) for v, _, s, e in sol.active_intervals())
    starts = [s for s, _, _ in items]
    nodes = [v for _, _, v in items]
    # last schedule position whose start event is <= e
    until = [bisect.bisect_right(starts, e) for _, e, _ in items]
    g = p.graph
    events = tuple(ScheduleEvent(v, k, u) for k, (v, u) in enumerate(zip(nodes, until), start=1))
    return Schedule(events, _peak_of_horizons(g, nodes, until), sum(g.durations[v] for v in nodes))


def event_positions(seq: Sequence[int], p: RematProblem) -> list[int]:
    """Event index of every occurrence of ``seq`` in the problem's domain.

    Unstaged: occurrences take events ``1..len(seq)``. Staged: the sequence must
    follow the stage layout of ``p.order`` or ``ValueError`` is raised.
    """
    if not p.staged:
        return list(range(1, len(seq) + 1))
    order = p.order
    n = p.graph.n
    seen = [False] * n
    out = []
    stage, slot = 1, 1
    for v in seq:
        j = order.position[v]
        if stage > n:
            raise ValueError("sequence continues past the last stage")
        if j == stage and not seen[v]:
            out.append(stage_event(stage, stage))
            seen[v] = True
            stage, slot = stage + 1, 1
        elif j < stage and j >= slot and seen[v]:
            out.append(stage_event(stage, j))
            slot = j + 1
        else:
            raise ValueError(f"node {v} cannot be placed in stage {stage} at or after slot {slot}")
    return out


def encode_sequence(seq: Sequence[int], p: RematProblem) -> IntervalSolution:
    """Interval solution for ``seq`` using minimal (last-use) retention."""
    g, caps = p.graph, p.remat_caps
    sim = simulate(g, seq, caps)
    events = event_positions(seq, p)
    starts = [[1] * caps[v] for v in range(g.n)]
    ends = [[1] * caps[v] for v in range(g.n)]
    active = [[False] * caps[v] for v in range(g.n)]
    copy = [0] * g.n
    for k, v in enumerate(seq):
        i = copy[v]
        copy[v] += 1
        starts[v][i] = events[k]
        ends[v][i] = events[sim.retained_until[k]]
        active[v][i] = True
    return IntervalSolution(
        tuple(map(tuple, starts)), tuple(map(tuple, ends)), tuple(map(tuple, active))
    )


def to_unstaged(sol: IntervalSolution, p: RematProblem) -> tuple[IntervalSolution, RematProblem]:
    """Relabel active events order-preservingly onto ``1..L`` of the unstaged domain."""
    q = RematProblem(p.graph, p.budget, p.remat_caps, "unstaged", None, p.time_limit, p.seed)
    used = sorted({t for _, _, s, e in sol.active_intervals() for t in (s, e)})
    rank = {t: k for k, t in enumerate(used, start=1)}
    starts = tuple(
        tuple(rank[s] if a else 1 for s, a in zip(sol.starts[v], sol.active[v])) for v in range(p.graph.n)
    )
    ends = tuple(
        tuple(rank[e] if a else 1 for e, a in zip(sol.ends[v], sol.active[v])) for v in range(p.graph.n)
    )
    return IntervalSolution(starts, ends, sol.active), q


# --- validation ---------------------------------------------------------------------


def validate(sol: IntervalSolution, p: RematProblem) -> list[Violation]:
    """Check every constraint family directly; empty list iff feasible."""
    g, caps = p.graph, p.remat_caps
    dom = EventDomain.for_problem(p)
    out: list[Violation] = []
    V = ViolationKind

    shape_ok = (
        len(sol.starts) == g.n
        and len(sol.ends) == g.n
        and len(sol.active) == g.n
        and all(len(sol.starts[v]) == len(sol.ends[v]) == len(sol.active[v]) == caps[v] for v in range(g.n))
    )
    if not shape_ok:
        return [Violation(V.OUT_OF_DOMAIN, ("shape",))]

    act = []
    for v in range(g.n):
        for i in range(caps[v]):
            s, e = sol.starts[v][i], sol.ends[v][i]
            if not (1 <= s <= dom.size and 1 <= e <= dom.size):
                out.append(Violation(V.OUT_OF_DOMAIN, (v, i)))
                continue
            if sol.active[v][i]:
                act.append((v, i, s, e))
    if out:
        return out

    for v in range(g.n):
        if not sol.active[v][0]:
            out.append(Violation(V.FIRST_INACTIVE, (v,)))

    if p.staged:
        order = p.order
        for v, i, s, _ in act:
            j = order.position[v]
            if i == 0:
                ok = s == j * (j + 1) // 2
            else:
                stage, slot = dom.stage_of(s)
                ok = slot == j and stage > j
            if not ok:
                out.append(Violation(V.OUT_OF_DOMAIN, (v, i), s))

    for v, i, s, e in act:
        if s > e:
            out.append(Violation(V.INTERVAL_ORDER, (v, i), s))

    for v in range(g.n):
        mine = [(i, sol.starts[v][i], sol.ends[v][i]) for i in range(caps[v]) if sol.active[v][i]]
        for (i, _, e), (k, s2, _) in zip(mine, mine[1:]):
            if e > s2:
                out.append(Violation(V.SAME_NODE_OVERLAP, (v, i, k), s2))

    by_start: dict[int, list] = {}
    for v, i, s, _ in act:
        by_start.setdefault(s, []).append((v, i))
    for s in sorted(by_start):
        if len(by_start[s]) > 1:
            out.append(Violation(V.START_COLLISION, tuple(by_start[s]), s))

    # load is piecewise constant between interval endpoints; report each overloaded piece once
    change: dict[int, int] = {}
    for v, _, s, e in act:
        if s <= e:
            change[s] = change.get(s, 0) + g.out_sizes[v]
            change[e + 1] = change.get(e + 1, 0) - g.out_sizes[v]
    load = 0
    for t in sorted(change):
        load += change[t]
        if load > p.budget:
            out.append(Violation(V.MEMORY_EXCEEDED, (load, p.budget), t))

    for u, v in g.edges:
        for i in range(caps[v]):
            if not sol.active[v][i]:
                continue
            sv = sol.starts[v][i]
            served = any(
                sol.active[u][j] and sol.starts[u][j] + 1 <= sv <= sol.ends[u][j] for j in range(caps[u])
            )
            if not served:
                out.append(Violation(V.PRECEDENCE_UNSERVED, (u, v, i), sv))
    return out


# --- brute force oracle ---------------------------------------------------------


class TooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class Frontier:
    """Every achievable ``(peak, duration)`` pair with its lexicographically smallest sequence."""

    points: dict[tuple[int, int], tuple[int, ...]]

    def optimum(self, budget: int) -> tuple[int, tuple[int, ...]] | None:
        best = None
        for (peak, dur), seq in self.points.items():
            if peak > budget:
                continue
            if best is None or (dur, seq) < best:
                best = (dur, seq)
        return best

    def min_peak(self) -> int:
        return min(peak for peak, _ in self.points)


def _stage_ok(p: RematProblem):
    if not p.staged:
        return None

    def ok(seq) -> bool:
        try:
            event_positions(seq, p)
        except ValueError:
            return False
        return True

    return ok


def brute_force_frontier(p: RematProblem) -> Frontier:
    """Enumerate every sequence with 1..C_v occurrences of each node.

    Prefixes are extended only with nodes whose predecessors have already
    appeared; every complete sequence is scored with :func:`simulate`.
    """
    g, caps = p.graph, p.remat_caps
    if sum(caps) > BRUTE_FORCE_MAX_INTERVALS:
        raise TooLargeError(f"sum of caps {sum(caps)} exceeds {BRUTE_FORCE_MAX_INTERVALS}")
    stage_ok = _stage_ok(p)
    n = g.n
    counts = [0] * n
    seq: list[int] = []
    points: dict[tuple[int, int], tuple[int, ...]] = {}
    missing = [n]

    def rec() -> None:
        if missing[0] == 0 and (stage_ok is None or stage_ok(seq)):
            sim = simulate(g, seq, caps)
            key = (sim.peak, sim.duration)
            if key not in points:
                points[key] = tuple(seq)
        for v in range(n):
            if counts[v] >= caps[v]:
                continue
            if any(counts[u] == 0 for u in g.preds[v]):
                continue
            if counts[v] == 0:
                missing[0] -= 1
            counts[v] += 1
            seq.append(v)
            rec()
            seq.pop()
            counts[v] -= 1
            if counts[v] == 0:
                missing[0] += 1

    rec()
    return Frontier(points)


@dataclass(frozen=True)
class BruteForceResult:
    feasible: bool
    objective: int | None
    schedule: Schedule | None


def brute_force_optimal(p: RematProblem, frontier: Frontier | None = None) -> BruteForceResult:
    """Exact optimum by exhaustive enumeration (tiny instances only)."""
    fr = frontier if frontier is not None else brute_force_frontier(p)
    best = fr.optimum(p.budget)
    if best is None:
        return BruteForceResult(False, None, None)
    dur, seq = best
    return BruteForceResult(True, dur, schedule_from_sequence(p.graph, seq, p.remat_caps))


# --- export -----------------------------------------------------------------------


def tdi_percent(duration: int, g: ComputeGraph) -> float:
    base = g.total_duration()
    if base == 0:
        return 0.0
    return 100.0 * (duration - base) / base


def schedule_to_dict(s: Schedule, g: ComputeGraph, budget: int | None = None) -> dict:
    d = {
        "events": [
            {"index": e.position, "node": g.names[e.node], "retained_until": e.retained_until}
            for e in s.events
        ],
        "summary": {
            "peak_memory": s.peak_memory,
            "total_duration": s.total_duration,
            "baseline_duration": g.total_duration(),
            "tdi_percent": round(tdi_percent(s.total_duration, g), 1),
        },
    }
    if budget is not None:
        d["summary"]["budget"] = budget
    return d


def schedule_from_dict(d: dict, g: ComputeGraph) -> Schedule:
    index = {name: v for v, name in enumerate(g.names)}
    raw = sorted(d["events"], key=lambda e: e["index"])
    events = []
    for k, e in enumerate(raw, start=1):
        if e["index"] != k:
            raise ValueError("schedule event indices must be 1..L without gaps")
        if e["node"] not in index:
            raise ValueError(f"unknown node {e['node']!r}")
        events.append(ScheduleEvent(index[e["node"]], k, int(e["retained_until"])))
    nodes = [e.node for e in events]
    until = [e.retained_until for e in events]
    return Schedule(tuple(events), _peak_of_horizons(g, nodes, until), sum(g.durations[v] for v in nodes))


def schedule_to_solution(s: Schedule, p: RematProblem) -> IntervalSolution:
    """Interval solution using the schedule's own retention horizons (unstaged events)."""
    g, caps = p.graph, p.remat_caps
    starts = [[1] * caps[v] for v in range(g.n)]
    ends = [[1] * caps[v] for v in range(g.n)]
    active = [[False] * caps[v] for v in range(g.n)]
    copy = [0] * g.n
    for e in s.events:
        v = e.node
        i = copy[v]
        copy[v] += 1
        if i >= caps[v]:
            raise SequenceError("CAP_EXCEEDED", f"node {g.names[v]!r} appears more than {caps[v]} times")
        starts[v][i] = e.position
        ends[v][i] = e.retained_until
        active[v][i] = True
    return IntervalSolution(tuple(map(tuple, starts)), tuple(map(tuple, ends)), tuple(map(tuple, active)))


def dumps_schedule(s: Schedule, g: ComputeGraph, budget: int | None = None) -> str:
    return json.dumps(schedule_to_dict(s, g, budget), indent=2) + "\n"
