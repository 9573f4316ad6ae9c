"""Acceptance gate: every criterion prints one PASS/FAIL line."""

import random
import time

import pytest

from conftest import SKIP4_EDGES
from rematsched.evaluator import (
    brute_force_frontier,
    decode_schedule,
    simulate,
    to_unstaged,
    validate,
)
from rematsched.generator import LayeredSpec, enumerate_small_dags, layered_spec_for, random_layered, random_weights
from rematsched.graph import (
    all_topological_orders,
    compute_lower_bound_memory,
    from_edges,
    no_remat_peak_memory,
    random_topological_order,
)
from rematsched.model import IntervalSolution, RematProblem, build_model
from rematsched.solver import SolveConfig, Status, solve

EXACT = SolveConfig(time_limit=60, lns_enabled=False)


@pytest.fixture
def report(capsys):
    def emit(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[ACCEPTANCE] {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return emit


def _oracle_instances():
    small = enumerate_small_dags(5)
    upto4 = [g for g in small if g.n <= 4]
    five = random.Random(0).sample([g for g in small if g.n == 5], 200)
    for k, g in enumerate(upto4 + five):
        yield g
        yield random_weights(g, 1000 + k)


def _matches(rep, best) -> bool:
    if best is None:
        return rep.status is Status.INFEASIBLE and rep.objective is None
    return rep.status is Status.OPTIMAL and rep.objective == best[0]


def test_1_oracle_equivalence(report):
    checked, bad, t0 = 0, [], time.monotonic()
    for g in _oracle_instances():
        fr = brute_force_frontier(RematProblem.create(g, 0))
        for M in range(g.total_size() + 1):
            rep = solve(RematProblem.create(g, M), EXACT)
            checked += 1
            if not _matches(rep, fr.optimum(M)):
                bad.append((g.edges, g.durations, g.out_sizes, M))
    elapsed = time.monotonic() - t0
    report(
        "1 oracle equivalence (n<=4 all, n=5 sample of 200, tolerance 0)",
        not bad and elapsed < 1800,
        f"{checked} instances, {len(bad)} mismatches, {elapsed:.0f}s",
    )


def test_2_skip4_example(report):
    g = from_edges(4, SKIP4_EDGES)
    at3 = solve(RematProblem.create(g, 3), EXACT)
    at2 = solve(RematProblem.create(g, 2), EXACT)
    starts = ((1, 7), (3, 1), (5, 1), (8, 1))
    ends = ((3, 8), (5, 1), (8, 1), (8, 1))
    active = ((True, True), (True, False), (True, False), (True, False))
    p = RematProblem.create(g, 3)
    sched = decode_schedule(IntervalSolution(starts, ends, active), p)
    peak = simulate(g, sched.sequence).peak
    ok = (
        at3.status is Status.OPTIMAL and at3.objective == 4
        and at2.status is Status.INFEASIBLE
        and sched.sequence == (0, 1, 2, 0, 3) and peak == 3
    )
    report(
        "2 four-node skip example",
        ok,
        f"M=3 {at3.status.value} {at3.objective}, M=2 {at2.status.value}, decoded {list(sched.sequence)} peak {peak}",
    )


def _fuzz_problem(rng: random.Random, k: int) -> RematProblem:
    n = rng.randint(2, 60)
    layers = rng.randint(1, max(1, n // 2))
    spec = LayeredSpec(
        n, layers, p_local=rng.uniform(0.1, 0.6), p_skip=rng.uniform(0.0, 0.15),
        duration_range=(1, rng.randint(1, 20)), size_range=(1, rng.randint(1, 20)), seed=k,
    )
    g = random_layered(spec)
    lo = compute_lower_bound_memory(g)
    order = random_topological_order(g, k)
    hi = no_remat_peak_memory(g, order)
    budget = rng.randint(max(0, lo - 1), max(lo, hi))
    caps = {v: rng.randint(1, 3) for v in range(n) if rng.random() < 0.2}
    staged = rng.random() < 0.25
    return RematProblem.create(
        g, budget, cap=2, overrides=caps, mode="staged" if staged else "unstaged",
        order=order if staged else None, seed=k,
    )


def test_3_soundness_fuzz(report):
    rng = random.Random(2024)
    cfg = SolveConfig(time_limit=10, node_limit=3000, lns_iterations=15)
    emitted = failures = solved = 0
    for k in range(500):
        p = _fuzz_problem(rng, k)
        seen = []
        rep = solve(build_model(p), cfg, on_incumbent=lambda t, c, s: seen.append((c, s)))
        solved += rep.solution is not None
        for cost, sol in seen:
            emitted += 1
            if validate(sol, p) or sol.objective(p.graph) != cost:
                failures += 1
        if rep.solution is not None and validate(rep.solution, p):
            failures += 1
    report(
        "3 soundness fuzz (500 problems, n<=60)",
        failures == 0 and emitted > 0,
        f"{emitted} incumbents from {solved} solved problems, {failures} invalid",
    )


def test_4_staged_consistency(report):
    checked, bad = 0, []
    graphs = [g for g in enumerate_small_dags(4)]
    for k, g0 in enumerate(graphs):
        for g in (g0, random_weights(g0, 7000 + k)):
            base = brute_force_frontier(RematProblem.create(g, 0))
            for order in all_topological_orders(g):
                for M in range(g.total_size() + 1):
                    p = RematProblem.create(g, M, mode="staged", order=order)
                    rep = solve(p, EXACT)
                    flat = base.optimum(M)
                    checked += 1
                    ok = True
                    if rep.objective is not None:
                        sol, q = to_unstaged(rep.solution, p)
                        ok = validate(rep.solution, p) == [] and validate(sol, q) == []
                        ok = ok and flat is not None and rep.objective >= flat[0]
                    if not ok:
                        bad.append((g.edges, order.nodes, M))
    report(
        "4 staged consistency (n<=4, every order)",
        not bad,
        f"{checked} staged instances, {len(bad)} violations",
    )


def test_5a_scaling_100_nodes(report):
    g = random_layered(layered_spec_for(100, 236, seed=0))
    peak = no_remat_peak_memory(g, random_topological_order(g, 0))
    budget = int(0.9 * peak + 0.5)
    p = RematProblem.create(g, budget)
    t0 = time.monotonic()
    rep = solve(p, SolveConfig(time_limit=55))
    wall = time.monotonic() - t0
    tdi = rep.tdi(g.total_duration())
    ok = (
        rep.solution is not None and validate(rep.solution, p) == []
        and tdi is not None and tdi <= 5.0 and wall <= 60.0
    )
    report(
        "5a scaling (n,m)=(100,%d) at 90%% budget" % g.edge_count,
        ok,
        f"status {rep.status.value}, TDI {tdi if tdi is None else round(tdi, 2)}%, wall {wall:.1f}s",
    )


def test_5b_scaling_1000_nodes(report):
    g = random_layered(layered_spec_for(1000, 6000, seed=0))
    peak = no_remat_peak_memory(g, random_topological_order(g, 0))
    budget = int(0.9 * peak + 0.5)
    p = RematProblem.create(g, budget)
    t0 = time.monotonic()
    rep = solve(p, SolveConfig(time_limit=3600, solution_limit=1))
    wall = time.monotonic() - t0
    ok = rep.solution is not None and validate(rep.solution, p) == [] and wall <= 3600
    tdi = rep.tdi(g.total_duration())
    report(
        "5b scaling (n,m)=(1000,%d) feasible within 1h" % g.edge_count,
        ok,
        f"status {rep.status.value}, TDI {tdi if tdi is None else round(tdi, 2)}%, wall {wall:.1f}s",
    )


def test_6_variable_counts(report):
    rng = random.Random(6)
    bad = 0
    for k in range(100):
        n = rng.randint(1, 80)
        g = random_layered(LayeredSpec(n, rng.randint(1, n), p_skip=rng.uniform(0, 0.2), seed=k))
        cap = rng.randint(1, 4)
        overrides = {v: rng.randint(1, 4) for v in range(n) if rng.random() < 0.1}
        p = RematProblem.create(g, 1, cap=cap, overrides=overrides)
        m = build_model(p)
        caps = p.remat_caps
        ok = m.interval_count == sum(caps) and m.domain.size == sum(caps)
        ok = ok and len(m.reservoirs) == sum(caps[v] for _, v in g.edges) <= max(caps) * g.edge_count
        ok = ok and len(m.reservoirs_by_edge()) == g.edge_count
        ok = ok and all(len(grp.events) == 2 + 2 * caps[grp.edge[0]] for grp in m.reservoirs)
        bad += not ok
    report("6 variable counts (100 graphs)", bad == 0, f"{bad} graphs with wrong counts")


def test_7_budget_monotonicity(report):
    rng = random.Random(7)
    pool = [g for g in enumerate_small_dags(5) if g.n >= 4]
    bad = 0
    for k in range(50):
        g = random_weights(rng.choice(pool), 500 + k)
        fr = brute_force_frontier(RematProblem.create(g, 0))
        oracle = [fr.optimum(M) for M in range(g.total_size() + 1)]
        solved = [solve(RematProblem.create(g, M), EXACT).objective for M in range(g.total_size() + 1)]
        inf = float("inf")
        seq = [inf if o is None else o[0] for o in oracle]
        mono = all(a >= b for a, b in zip(seq, seq[1:]))
        agree = solved == [None if o is None else o[0] for o in oracle]
        bad += not (mono and agree)
    report("7 budget monotonicity (50 instances)", bad == 0, f"{bad} non-monotone or mismatched sweeps")
