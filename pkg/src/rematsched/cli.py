"""Command-line entry point: solve, validate, bench, simulate, oracle, generate."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .evaluator import (
    SequenceError,
    TooLargeError,
    brute_force_optimal,
    decode_schedule,
    dumps_schedule,
    schedule_from_dict,
    schedule_to_solution,
    simulate,
    tdi_percent,
    validate,
)
from .generator import chain, layered_spec_for, random_layered, u_net
from .graph import ComputeGraph, GraphError, TopoOrder, dumps_graph, load_graph, no_remat_peak_memory, random_topological_order
from .model import RematProblem, build_model
from .solver import SolveConfig, Status, solve, trace_csv

log = logging.getLogger("rematsched")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 3
EXIT_UNKNOWN = 4
EXIT_INVALID = 5

_STATUS_EXIT = {
    Status.OPTIMAL: EXIT_OK,
    Status.FEASIBLE: EXIT_OK,
    Status.INFEASIBLE: EXIT_INFEASIBLE,
    Status.UNKNOWN: EXIT_UNKNOWN,
}


class CliError(Exception):
    pass


@dataclass
class RunManifest:
    graph: str
    budget: float
    budget_mode: str = "frac"
    cap: int = 2
    cap_overrides: dict[str, int] = field(default_factory=dict)
    mode: str = "unstaged"
    time_limit: float = 10.0
    seed: int = 0
    workers: int = 1
    out: str = "."
    trace: str | None = None

    def __post_init__(self) -> None:
        if self.budget_mode not in ("frac", "abs"):
            raise CliError(f"budget mode must be 'frac' or 'abs', got {self.budget_mode!r}")
        if self.budget_mode == "frac" and not 0.0 < self.budget <= 1.0:
            raise CliError(f"budget fraction must lie in (0, 1], got {self.budget}")
        if self.budget_mode == "abs" and (self.budget < 0 or self.budget != int(self.budget)):
            raise CliError(f"absolute budget must be a nonnegative integer, got {self.budget}")
        if self.mode not in ("staged", "unstaged"):
            raise CliError(f"mode must be 'staged' or 'unstaged', got {self.mode!r}")
        if self.cap < 1:
            raise CliError("cap must be >= 1")
        if self.time_limit <= 0:
            raise CliError("time limit must be positive")
        if self.workers < 1:
            raise CliError("workers must be >= 1")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunManifest":
        try:
            doc = json.loads(Path(path).read_text())
            return cls(**doc)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise CliError(f"cannot read manifest {path}: {exc}") from exc


@dataclass(frozen=True)
class ResolvedBudget:
    budget: int
    order: TopoOrder
    no_remat_peak: int


def read_graph(path: str | Path) -> ComputeGraph:
    try:
        return load_graph(Path(path).read_bytes())
    except OSError as exc:
        raise CliError(f"cannot read graph {path}: {exc}") from exc
    except GraphError as exc:
        raise CliError(f"invalid graph {path}: {exc}") from exc


def resolve_budget(g: ComputeGraph, value: float, mode: str, seed: int) -> ResolvedBudget:
    """Absolute budget, plus the seeded order whose no-remat peak a fraction refers to.

    Fractions round to the nearest integer (halves up).
    """
    order = random_topological_order(g, seed)
    peak = no_remat_peak_memory(g, order)
    if mode == "frac":
        budget = math.floor(value * peak + 0.5)
    else:
        budget = int(value)
    return ResolvedBudget(budget, order, peak)


def _caps(g: ComputeGraph, cap: int, overrides: dict[str, int]) -> dict[int, int]:
    index = {name: v for v, name in enumerate(g.names)}
    out = {}
    for name, c in overrides.items():
        if name not in index:
            raise CliError(f"cap override for unknown node {name!r}")
        if c < 1:
            raise CliError(f"cap override for {name!r} must be >= 1")
        out[index[name]] = c
    return out


def _parse_overrides(items: list[str] | None) -> dict[str, int]:
    out = {}
    for item in items or []:
        name, sep, val = item.rpartition("=")
        if not sep or not name:
            raise CliError(f"cap override must look like NAME=INT, got {item!r}")
        try:
            out[name] = int(val)
        except ValueError as exc:
            raise CliError(f"cap override must look like NAME=INT, got {item!r}") from exc
    return out


def build_report(man: RunManifest, g: ComputeGraph, rb: ResolvedBudget, rep, elapsed: float) -> dict:
    """Report document. Everything outside ``timing`` depends only on the manifest and seed."""
    return {
        "status": rep.status.value,
        "objective": rep.objective,
        "lower_bound": rep.lower_bound,
        "tdi_percent": None if rep.objective is None else round(tdi_percent(rep.objective, g), 1),
        "peak_memory": rep.peak,
        "budget": rb.budget,
        "budget_mode": man.budget_mode,
        "budget_value": man.budget,
        "no_remat_peak": rb.no_remat_peak,
        "baseline_duration": g.total_duration(),
        "order": [g.names[v] for v in rb.order.nodes],
        "graph": {"nodes": g.n, "edges": g.edge_count},
        "mode": man.mode,
        "cap": man.cap,
        "cap_overrides": dict(sorted(man.cap_overrides.items())),
        "seed": man.seed,
        "time_limit": man.time_limit,
        "workers": man.workers,
        "phase1_peak": rep.phase1_peak,
        "timing": {
            "phase1_seconds": round(rep.phase1_time, 6),
            "time_to_best_seconds": round(rep.trace[-1][0], 6) if rep.trace else None,
            "wall_seconds": round(elapsed, 6),
        },
    }


def run_solve(man: RunManifest) -> tuple[int, dict]:
    g = read_graph(man.graph)
    rb = resolve_budget(g, man.budget, man.budget_mode, man.seed)
    kw = {"mode": man.mode, "time_limit": man.time_limit, "seed": man.seed}
    if man.mode == "staged":
        kw["order"] = rb.order
    p = RematProblem.create(g, rb.budget, man.cap, _caps(g, man.cap, man.cap_overrides), **kw)
    cfg = SolveConfig(time_limit=man.time_limit, worker_count=man.workers, seed=man.seed)
    t0 = time.monotonic()
    rep = solve(build_model(p), cfg)
    report = build_report(man, g, rb, rep, time.monotonic() - t0)

    out = Path(man.out)
    out.mkdir(parents=True, exist_ok=True)
    if rep.solution is not None:
        sched = decode_schedule(rep.solution, p)
        (out / "schedule.json").write_text(dumps_schedule(sched, g, rb.budget))
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    trace_path = Path(man.trace) if man.trace else out / "trace.csv"
    trace_path.write_text(trace_csv(rep, g.total_duration()))
    return _STATUS_EXIT[rep.status], report


def cmd_solve(args: argparse.Namespace) -> int:
    if args.manifest:
        man = RunManifest.from_file(args.manifest)
    else:
        if args.graph is None or args.budget is None:
            raise CliError("solve needs --graph and --budget (or --manifest)")
        man = RunManifest(
            graph=args.graph,
            budget=args.budget,
            budget_mode=args.budget_mode,
            cap=args.cap,
            cap_overrides=_parse_overrides(args.cap_override),
            mode=args.mode,
            time_limit=args.time_limit,
            seed=args.seed,
            workers=args.workers,
            out=args.out,
            trace=args.trace,
        )
    code, report = run_solve(man)
    tdi = report["tdi_percent"]
    print(
        f"status={report['status']} objective={report['objective']} "
        f"tdi={'-' if tdi is None else f'{tdi:.1f}'}% peak={report['peak_memory']} budget={report['budget']}"
    )
    return code


def cmd_validate(args: argparse.Namespace) -> int:
    g = read_graph(args.graph)
    try:
        doc = json.loads(Path(args.schedule).read_text())
        sched = schedule_from_dict(doc, g)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"cannot read schedule {args.schedule}: {exc}") from exc
    rb = resolve_budget(g, args.budget, args.budget_mode, args.seed)
    seq = sched.sequence
    counts = [0] * g.n
    for v in seq:
        counts[v] += 1
    cap = args.cap if args.cap is not None else max([1, *counts])
    p = RematProblem.create(g, rb.budget, cap)
    try:
        sol = schedule_to_solution(sched, p)
    except SequenceError as exc:
        print(exc)
        return EXIT_INVALID
    bad = validate(sol, p)
    for v in bad:
        print(v)
    try:
        sim = simulate(g, seq, p.remat_caps)
        print(f"sequence peak={sim.peak} duration={sim.duration} budget={rb.budget}")
    except SequenceError as exc:
        print(exc)
    if bad:
        return EXIT_INVALID
    print("OK")
    return EXIT_OK


BENCH_FIELDS = [
    "graph", "nodes", "edges", "budget_fraction", "budget", "time_limit",
    "status", "objective", "tdi_percent", "peak_memory", "time_to_best_seconds",
]


def _bench_graph(entry: dict, base: Path) -> ComputeGraph:
    if "path" in entry:
        return read_graph(base / entry["path"])
    gen = entry.get("generate")
    if not isinstance(gen, dict):
        raise CliError(f"bench graph {entry.get('name')!r} needs 'path' or 'generate'")
    kind = gen.get("kind", "layered")
    if kind == "layered":
        return random_layered(layered_spec_for(int(gen["nodes"]), int(gen["edges"]), seed=int(gen.get("seed", 0))))
    if kind == "chain":
        return chain(int(gen["nodes"]))
    if kind == "unet":
        return u_net(int(gen["depth"]))
    raise CliError(f"unknown generator kind {kind!r}")


def run_bench(spec: dict, base: Path) -> list[dict]:
    """One row per (graph, budget, time limit); failures become UNKNOWN rows.

    Rows are sorted by graph name, then descending absolute budget.
    """
    fracs = spec.get("budgets", [0.9, 0.8])
    limits = spec.get("time_limits", [10.0])
    cap = int(spec.get("cap", 2))
    mode = spec.get("mode", "unstaged")
    seed = int(spec.get("seed", 0))
    rows = []
    for entry in spec["graphs"]:
        name = entry["name"]
        try:
            g = _bench_graph(entry, base)
        except (CliError, KeyError, ValueError) as exc:
            log.error("bench graph %s failed to load: %s", name, exc)
            g = None
        for frac in fracs:
            for tl in limits:
                row = dict.fromkeys(BENCH_FIELDS)
                row.update(graph=name, budget_fraction=frac, time_limit=tl, status=Status.UNKNOWN.value)
                if g is None:
                    rows.append(row)
                    continue
                row.update(nodes=g.n, edges=g.edge_count)
                try:
                    rb = resolve_budget(g, frac, "frac", seed)
                    row["budget"] = rb.budget
                    kw = {"mode": mode, "time_limit": tl, "seed": seed}
                    if mode == "staged":
                        kw["order"] = rb.order
                    p = RematProblem.create(g, rb.budget, cap, **kw)
                    rep = solve(build_model(p), SolveConfig(time_limit=tl, seed=seed))
                    row["status"] = rep.status.value
                    if rep.objective is not None:
                        row.update(
                            objective=rep.objective,
                            tdi_percent=f"{tdi_percent(rep.objective, g):.1f}",
                            peak_memory=rep.peak,
                            time_to_best_seconds=f"{rep.trace[-1][0]:.3f}",
                        )
                except Exception as exc:  # a failed cell must not stop the table
                    log.error("bench row %s @ %s failed: %s", name, frac, exc)
                    row["status"] = Status.UNKNOWN.value
                rows.append(row)
    rows.sort(key=lambda r: (r["graph"], -(r["budget"] if r["budget"] is not None else -1), r["time_limit"]))
    return rows


def bench_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else r[k]) for k in BENCH_FIELDS})
    return buf.getvalue()


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        spec = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read bench spec {args.spec}: {exc}") from exc
    text = bench_csv(run_bench(spec, Path(args.spec).parent))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _sequence_arg(g: ComputeGraph, names: str) -> list[int]:
    index = {name: v for v, name in enumerate(g.names)}
    seq = []
    for name in names.split(","):
        name = name.strip()
        if name not in index:
            raise CliError(f"unknown node {name!r}")
        seq.append(index[name])
    return seq


def cmd_simulate(args: argparse.Namespace) -> int:
    g = read_graph(args.graph)
    seq = _sequence_arg(g, args.sequence)
    try:
        sim = simulate(g, seq, [args.cap] * g.n)
    except SequenceError as exc:
        print(exc)
        return EXIT_INVALID
    print(f"peak={sim.peak} duration={sim.duration} tdi={tdi_percent(sim.duration, g):.1f}%")
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    g = read_graph(args.graph)
    rb = resolve_budget(g, args.budget, args.budget_mode, args.seed)
    try:
        res = brute_force_optimal(RematProblem.create(g, rb.budget, args.cap))
    except TooLargeError as exc:
        raise CliError(str(exc)) from exc
    if not res.feasible:
        print(f"INFEASIBLE budget={rb.budget}")
        return EXIT_INFEASIBLE
    seq = ",".join(g.names[v] for v in res.schedule.sequence)
    print(f"objective={res.objective} peak={res.schedule.peak_memory} budget={rb.budget} sequence={seq}")
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    if args.kind == "layered":
        if args.edges is None:
            raise CliError("layered graphs need --edges")
        g = random_layered(layered_spec_for(args.nodes, args.edges, seed=args.seed))
    elif args.kind == "chain":
        g = chain(args.nodes)
    else:
        g = u_net(args.depth)
    text = dumps_graph(g)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _budget_args(sp: argparse.ArgumentParser, required: bool = True) -> None:
    sp.add_argument("--budget", type=float, required=required, help="fraction of the no-remat peak or absolute units")
    sp.add_argument("--budget-mode", choices=("frac", "abs"), default="frac")
    sp.add_argument("--seed", type=int, default=0, help="seeds the topological order a fraction refers to")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rematsched", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="find a schedule minimizing total duration under a memory budget")
    sp.add_argument("--manifest", help="JSON run manifest (replaces the flags below)")
    sp.add_argument("--graph")
    _budget_args(sp, required=False)
    sp.add_argument("--cap", type=int, default=2, help="max computations per node")
    sp.add_argument("--cap-override", action="append", metavar="NODE=INT")
    sp.add_argument("--mode", choices=("staged", "unstaged"), default="unstaged")
    sp.add_argument("--time-limit", type=float, default=10.0)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default=".", help="directory for schedule.json, report.json, trace.csv")
    sp.add_argument("--trace", help="trace CSV path (default OUT/trace.csv)")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("validate", help="re-check a schedule file against a graph and budget")
    sp.add_argument("--schedule", required=True)
    sp.add_argument("--graph", required=True)
    _budget_args(sp)
    sp.add_argument("--cap", type=int, default=None, help="max computations per node (default: unchecked)")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("bench", help="solve graphs x budgets x time limits into a CSV table")
    sp.add_argument("spec")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("simulate", help="peak memory and duration of a node sequence")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--sequence", required=True, help="comma-separated node ids")
    sp.add_argument("--cap", type=int, default=2)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("oracle", help="exhaustive optimum for tiny graphs")
    sp.add_argument("--graph", required=True)
    _budget_args(sp)
    sp.add_argument("--cap", type=int, default=2)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("generate", help="write a synthetic graph as JSON")
    sp.add_argument("kind", choices=("layered", "chain", "unet"))
    sp.add_argument("--nodes", type=int, default=100)
    sp.add_argument("--edges", type=int)
    sp.add_argument("--depth", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_generate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
