"""Two-phase solve driver and reporting."""

from __future__ import annotations

import csv
import io
import logging
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from ..evaluator import encode_sequence, simulate, tdi_percent, validate
from ..graph import TopoOrder, no_remat_peak_memory, random_topological_order
from ..model import IntervalSolution, ModelInstance, RematProblem, build_model, to_phase1
from .heuristic import StagedSequence, improve, reduce_peak
from .search import BranchAndBound, static_infeasible

log = logging.getLogger(__name__)

PHASE1_SHARE = 0.2
BNB_SHARE = 0.3  # of phase-2 time, before handing over to the improvement loop


class Status(str, Enum):
    OPTIMAL = "OPTIMAL"
    FEASIBLE = "FEASIBLE"
    INFEASIBLE = "INFEASIBLE"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class SolveConfig:
    time_limit: float = 10.0
    worker_count: int = 1
    seed: int = 0
    phase1_enabled: bool = True
    log_interval: float = 5.0
    improvement_tolerance: int = 0
    lns_enabled: bool = True
    node_limit: int | None = None
    lns_iterations: int | None = None
    solution_limit: int | None = None  # stop once this many incumbents were found

    def __post_init__(self) -> None:
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        if self.improvement_tolerance < 0:
            raise ValueError("improvement_tolerance must be >= 0")
        if self.solution_limit is not None and self.solution_limit < 1:
            raise ValueError("solution_limit must be >= 1")


@dataclass
class SolveReport:
    status: Status
    solution: IntervalSolution | None
    objective: int | None
    lower_bound: int | None
    trace: list[tuple[float, int]] = field(default_factory=list)
    phase1_time: float = 0.0
    phase1_peak: int | None = None
    sequence: tuple[int, ...] | None = None
    peak: int | None = None
    order: TopoOrder | None = None
    nodes: int = 0

    def tdi(self, baseline: int) -> float | None:
        if self.objective is None:
            return None
        if baseline == 0:
            return 0.0
        return 100.0 * (self.objective - baseline) / baseline

    def summary(self, p: RematProblem) -> dict:
        g = p.graph
        return {
            "status": self.status.value,
            "objective": self.objective,
            "lower_bound": self.lower_bound,
            "baseline_duration": g.total_duration(),
            "tdi_percent": None if self.objective is None else round(tdi_percent(self.objective, g), 1),
            "peak_memory": self.peak,
            "budget": p.budget,
            "phase1_peak": self.phase1_peak,
            "phase1_time": self.phase1_time,
            "time_to_best": self.trace[-1][0] if self.trace else None,
        }


def trace_csv(report: SolveReport, baseline: int) -> str:
    """Progress trace as CSV: elapsed_seconds, objective, total_duration_increase_percent."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["elapsed_seconds", "objective", "total_duration_increase_percent"])
    for t, obj in report.trace:
        tdi = 0.0 if baseline == 0 else 100.0 * (obj - baseline) / baseline
        w.writerow([f"{t:.6f}", obj, f"{tdi:.4f}"])
    return buf.getvalue()


class _Incumbent:
    """Best solution shared between search routines; every update is validated."""

    def __init__(self, p: RematProblem, t0: float, listener=None):
        self.p = p
        self.listener = listener
        self.t0 = t0
        self.lock = threading.Lock()
        self.cost: int | None = None
        self.seq: tuple[int, ...] | None = None
        self.solution: IntervalSolution | None = None
        self.peak: int | None = None
        self.trace: list[tuple[float, int]] = []

    def offer(self, cost: int, seq) -> bool:
        with self.lock:
            if self.cost is not None and cost >= self.cost:
                return False
            sol = encode_sequence(seq, self.p)
            bad = validate(sol, self.p)
            if bad:
                log.error("rejected incumbent with violations: %s", bad[:3])
                return False
            if sol.objective(self.p.graph) != cost:
                log.error("incumbent cost mismatch %s != %s", sol.objective(self.p.graph), cost)
                return False
            self.cost = cost
            self.seq = tuple(seq)
            self.solution = sol
            self.peak = simulate(self.p.graph, seq, self.p.remat_caps).peak
            self.trace.append((time.monotonic() - self.t0, cost))
            if self.listener is not None:
                self.listener(self.trace[-1][0], cost, sol)
            return True


def _base_order(p: RematProblem) -> TopoOrder:
    if p.staged:
        return p.order
    return random_topological_order(p.graph, p.seed)


def phase1(
    m: ModelInstance,
    cfg: SolveConfig,
    deadline: float | None = None,
) -> tuple[IntervalSolution, int, tuple[int, ...]]:
    """Find a solution minimizing ``max(peak, M)``, starting from a plain topological order.

    Returns the interval solution, its peak memory and its node sequence.
    A peak above the budget means no memory-feasible warm start was found.
    """
    p = m.problem
    p1 = to_phase1(m)
    g, caps, budget = p.graph, p.remat_caps, p.budget
    if deadline is None:
        deadline = time.monotonic() + cfg.time_limit
    order = _base_order(p)
    start = StagedSequence.plain(order)
    best_seq = start.flatten()
    best_peak = no_remat_peak_memory(g, order)
    if p1.phase1_objective(best_peak) > budget:
        ss, ev = reduce_peak(g, start, caps, budget, deadline)
        if ev.peak < best_peak:
            best_seq, best_peak = ev.seq, ev.peak
    if best_peak > budget and time.monotonic() < deadline and static_infeasible(g, budget) is None:
        bnb = BranchAndBound(
            g, caps, budget, order=p.order if p.staged else None,
            deadline=deadline, first_solution=True,
        )
        out = bnb.run()
        if out.best_seq is not None:
            best_seq = list(out.best_seq)
            best_peak = simulate(g, best_seq, caps).peak
    sol = encode_sequence(best_seq, p)
    return sol, best_peak, tuple(best_seq)


def solve(
    m: ModelInstance | RematProblem,
    cfg: SolveConfig | None = None,
    on_incumbent: Callable[[float, int, IntervalSolution], None] | None = None,
) -> SolveReport:
    """Minimize total duration under the memory budget.

    Phase 1 (optional) supplies a memory-feasible warm start; phase 2 runs
    branch-and-bound, then a ruin-and-recreate loop on large instances once
    the exact search has had its share of the time. ``on_incumbent`` sees
    every accepted incumbent (elapsed seconds, objective, solution) after it
    has passed validation.
    """
    if isinstance(m, RematProblem):
        m = build_model(m)
    if cfg is None:
        cfg = SolveConfig(time_limit=m.problem.time_limit, seed=m.problem.seed)
    p = m.problem
    g, caps, budget = p.graph, p.remat_caps, p.budget
    t0 = time.monotonic()
    end = t0 + cfg.time_limit
    inc = _Incumbent(p, t0, on_incumbent)
    root_lb = g.total_duration()
    order = _base_order(p)

    if static_infeasible(g, budget) is not None:
        return SolveReport(Status.INFEASIBLE, None, None, None, [], 0.0, None, order=order)

    phase1_time = 0.0
    phase1_peak = None
    seq = None
    if cfg.phase1_enabled:
        p1_deadline = t0 + PHASE1_SHARE * cfg.time_limit
        _, phase1_peak, seq = phase1(m, cfg, p1_deadline)
        phase1_time = time.monotonic() - t0
        if phase1_peak <= budget:
            inc.offer(sum(g.durations[v] for v in seq), seq)

    def report(status: Status, lb: int | None, nodes: int) -> SolveReport:
        return SolveReport(
            status, inc.solution, inc.cost, lb, list(inc.trace), phase1_time, phase1_peak,
            inc.seq, inc.peak, order, nodes,
        )

    def enough() -> bool:
        return cfg.solution_limit is not None and len(inc.trace) >= cfg.solution_limit

    if inc.cost is not None and inc.cost <= root_lb:
        return report(Status.OPTIMAL, inc.cost, 0)
    if enough():
        return report(Status.FEASIBLE, root_lb, 0)

    remaining = end - time.monotonic()
    big = sum(caps) > 40
    bnb_deadline = end if not (cfg.lns_enabled and big) else time.monotonic() + BNB_SHARE * remaining
    bnb = BranchAndBound(
        g, caps, budget,
        order=p.order if p.staged else None,
        deadline=bnb_deadline,
        node_limit=cfg.node_limit,
        upper_bound=inc.cost,
        on_incumbent=lambda c, s: inc.offer(c, s),
        tolerance=cfg.improvement_tolerance,
        should_stop=enough,
    )
    out = bnb.run()
    if out.exhausted:
        if inc.cost is None:
            return report(Status.INFEASIBLE, None, out.nodes)
        if cfg.improvement_tolerance == 0:
            return report(Status.OPTIMAL, inc.cost, out.nodes)
        return report(Status.FEASIBLE, max(root_lb, inc.cost - cfg.improvement_tolerance), out.nodes)

    if cfg.lns_enabled and inc.cost is not None and time.monotonic() < end and not enough():
        _run_improvement(p, inc, order, end, cfg, fallback=seq, should_stop=enough)

    status = Status.FEASIBLE if inc.cost is not None else Status.UNKNOWN
    if inc.cost is not None and inc.cost <= root_lb:
        status = Status.OPTIMAL
        return report(status, inc.cost, out.nodes)
    return report(status, root_lb, out.nodes)


def _staged_from_seq(seq, order: TopoOrder) -> StagedSequence | None:
    """Recover the stage layout of ``seq`` relative to ``order``, if it has one."""
    n = len(order)
    recs: list[list[int]] = [[] for _ in range(n)]
    seen = [False] * n
    stage, slot = 1, 1
    for v in seq:
        j = order.position[v]
        if stage > n:
            return None
        if j == stage and not seen[v]:
            seen[v] = True
            stage, slot = stage + 1, 1
        elif seen[v] and slot <= j < stage:
            recs[stage - 1].append(j)
            slot = j + 1
        else:
            return None
    return StagedSequence(order.nodes, recs)


def _first_occurrence_order(seq) -> TopoOrder:
    seen: dict[int, None] = {}
    for v in seq:
        seen.setdefault(v, None)
    return TopoOrder(tuple(seen))


def _run_improvement(
    p: RematProblem,
    inc: _Incumbent,
    order: TopoOrder,
    end: float,
    cfg: SolveConfig,
    fallback=None,
    should_stop: Callable[[], bool] | None = None,
) -> None:
    g, caps, budget = p.graph, p.remat_caps, p.budget
    ss = _staged_from_seq(inc.seq, order)
    if ss is None and not p.staged:
        ss = _staged_from_seq(inc.seq, _first_occurrence_order(inc.seq))
    if ss is None and fallback is not None:
        ss = _staged_from_seq(fallback, order)
    if ss is None:
        return

    def worker(seed: int) -> None:
        improve(
            g, ss.copy(), caps, budget, end, seed,
            on_improve=lambda c, s: inc.offer(c, s),
            max_iterations=cfg.lns_iterations,
            should_stop=should_stop,
        )

    if cfg.worker_count == 1:
        worker(cfg.seed)
        return
    threads = [threading.Thread(target=worker, args=(cfg.seed + k,)) for k in range(cfg.worker_count)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
