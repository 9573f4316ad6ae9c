import pytest

from conftest import UNET2_EDGES
from rematsched.evaluator import brute_force_optimal, decode_schedule, simulate, validate
from rematsched.generator import LayeredSpec, random_layered, u_net
from rematsched.graph import from_edges, no_remat_peak_memory, topological_order
from rematsched.model import RematProblem, build_model
from rematsched.solver import BranchAndBound, SolveConfig, Status, solve, trace_csv
from rematsched.solver.search import static_infeasible

FAST = SolveConfig(time_limit=5)


def test_skip4_optimal_at_three(skip4):
    rep = solve(RematProblem.create(skip4, 3), FAST)
    assert rep.status is Status.OPTIMAL
    assert rep.objective == rep.lower_bound == 4
    assert rep.peak == 3


def test_skip4_infeasible_at_two(skip4):
    rep = solve(RematProblem.create(skip4, 2), FAST)
    assert rep.status is Status.INFEASIBLE
    assert rep.solution is None and rep.objective is None
    assert static_infeasible(skip4, 2) == 3


def test_chain_gains_nothing(chain4):
    for M in (2, 3, 4):
        rep = solve(RematProblem.create(chain4, M), FAST)
        assert rep.status is Status.OPTIMAL and rep.objective == 4


def test_unbounded_budget_needs_no_recompute():
    g = random_layered(LayeredSpec(30, 6, seed=1))
    rep = solve(RematProblem.create(g, g.total_size()), FAST)
    assert rep.status is Status.OPTIMAL
    assert rep.objective == g.total_duration()
    assert len(rep.sequence) == g.n


def test_recompute_is_used_when_it_helps():
    g = from_edges(5, UNET2_EDGES)
    rep = solve(RematProblem.create(g, 3), FAST)
    assert rep.status is Status.OPTIMAL and rep.objective == 6
    assert len(rep.sequence) == 6
    assert simulate(g, rep.sequence).peak <= 3


def test_solution_is_valid_and_consistent():
    g = u_net(3, duration=2)
    p = RematProblem.create(g, 4)
    rep = solve(p, FAST)
    assert rep.status is Status.OPTIMAL and rep.objective == 16
    assert validate(rep.solution, p) == []
    sched = decode_schedule(rep.solution, p)
    assert sched.sequence == rep.sequence
    assert sched.total_duration == rep.objective
    assert brute_force_optimal(p).objective == rep.objective


def test_staged_solve(skip4):
    p = RematProblem.create(skip4, 3, mode="staged", order=topological_order(skip4))
    rep = solve(p, FAST)
    assert rep.status is Status.OPTIMAL and rep.objective == 4
    assert validate(rep.solution, p) == []


def test_trace_strictly_decreasing_and_emitted_incumbents_validate():
    g = random_layered(LayeredSpec(40, 8, p_skip=0.1, seed=4))
    M = int(0.8 * no_remat_peak_memory(g, topological_order(g)))
    p = RematProblem.create(g, M)
    seen = []
    rep = solve(p, SolveConfig(time_limit=3), on_incumbent=lambda t, c, s: seen.append((c, s)))
    objs = [c for _, c in rep.trace]
    assert objs == sorted(set(objs), reverse=True)
    assert [c for c, _ in seen] == objs
    for c, sol in seen:
        assert validate(sol, p) == [] and sol.objective(g) == c
    text = trace_csv(rep, g.total_duration())
    assert text.splitlines()[0] == "elapsed_seconds,objective,total_duration_increase_percent"
    assert len(text.splitlines()) == len(rep.trace) + 1


def test_unknown_when_nothing_found():
    g = u_net(4)
    p = RematProblem.create(g, 3)
    rep = solve(p, SolveConfig(time_limit=5, phase1_enabled=False, node_limit=1))
    assert rep.status is Status.UNKNOWN and rep.solution is None


def test_deterministic_with_fixed_work():
    g = random_layered(LayeredSpec(60, 12, p_skip=0.05, seed=9))
    M = int(0.85 * no_remat_peak_memory(g, topological_order(g)))
    cfg = SolveConfig(time_limit=120, seed=3, node_limit=2000, lns_iterations=30)
    a = solve(RematProblem.create(g, M, seed=3), cfg)
    b = solve(RematProblem.create(g, M, seed=3), cfg)
    assert a.status == b.status
    assert a.objective == b.objective and a.sequence == b.sequence
    assert a.solution == b.solution
    assert [c for _, c in a.trace] == [c for _, c in b.trace]


def test_tolerance_gives_feasible_within_gap():
    g = from_edges(5, UNET2_EDGES)
    rep = solve(RematProblem.create(g, 3), SolveConfig(time_limit=5, improvement_tolerance=1, phase1_enabled=False))
    assert rep.status in (Status.FEASIBLE, Status.OPTIMAL)
    assert rep.objective - 1 <= 6 <= rep.objective


def test_two_workers():
    g = random_layered(LayeredSpec(100, 20, p_skip=0.03, seed=2))
    M = int(0.9 * no_remat_peak_memory(g, topological_order(g)))
    p = RematProblem.create(g, M)
    rep = solve(p, SolveConfig(time_limit=4, worker_count=2))
    assert rep.status in (Status.FEASIBLE, Status.OPTIMAL)
    assert validate(rep.solution, p) == []


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(time_limit=0)
    with pytest.raises(ValueError):
        SolveConfig(worker_count=0)


def test_branch_and_bound_alone(skip4):
    out = BranchAndBound(skip4, [2] * 4, 3).run()
    assert out.exhausted and out.best_cost == 4 and out.best_seq == (0, 1, 2, 3)
    out = BranchAndBound(skip4, [2] * 4, 3, order=topological_order(skip4)).run()
    assert out.exhausted and out.best_cost == 4


def test_accepts_model_instance(skip4):
    rep = solve(build_model(RematProblem.create(skip4, 3)), FAST)
    assert rep.objective == 4
