import csv
import io
import json
import subprocess
import sys

import pytest

from rematsched.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_INVALID, EXIT_OK, EXIT_UNKNOWN, main
from rematsched.generator import chain, random_layered, LayeredSpec
from rematsched.graph import dumps_graph

SKIP4_DOC = {
    "nodes": [{"id": str(k), "duration": 1, "out_size": 1} for k in (1, 2, 3, 4)],
    "edges": [{"from": a, "to": b} for a, b in (("1", "2"), ("2", "3"), ("3", "4"), ("1", "4"))],
}


@pytest.fixture
def skip4_file(tmp_path):
    path = tmp_path / "skip4.json"
    path.write_text(json.dumps(SKIP4_DOC))
    return path


def solve_args(graph, out, *extra):
    return ["solve", "--graph", str(graph), "--out", str(out), "--time-limit", "5", *extra]


def read_report(out):
    return json.loads((out / "report.json").read_text())


def test_exit_codes_distinct():
    assert len({EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_UNKNOWN, EXIT_INVALID}) == 5


def test_solve_skip4_full_budget(skip4_file, tmp_path):
    out = tmp_path / "r"
    assert main(solve_args(skip4_file, out, "--budget", "1.0")) == EXIT_OK
    rep = read_report(out)
    assert rep["status"] == "OPTIMAL"
    assert rep["tdi_percent"] == 0.0 and rep["peak_memory"] == 3 and rep["budget"] == 3
    assert rep["lower_bound"] == rep["objective"] == 4
    assert rep["order"] == ["1", "2", "3", "4"]
    assert "phase1_seconds" in rep["timing"]
    sched = json.loads((out / "schedule.json").read_text())
    assert [e["node"] for e in sched["events"]] == ["1", "2", "3", "4"]
    trace = list(csv.reader(io.StringIO((out / "trace.csv").read_text())))
    assert trace[0] == ["elapsed_seconds", "objective", "total_duration_increase_percent"]
    assert trace[-1][1] == "4"


def test_solve_skip4_infeasible(skip4_file, tmp_path):
    out = tmp_path / "r"
    assert main(solve_args(skip4_file, out, "--budget", "0.66")) == EXIT_INFEASIBLE
    rep = read_report(out)
    assert rep["status"] == "INFEASIBLE" and rep["budget"] == 2
    assert not (out / "schedule.json").exists()


def test_chain_has_no_overhead(tmp_path):
    g = tmp_path / "chain.json"
    g.write_text(dumps_graph(chain(6)))
    for budget in ("2", "3", "6"):
        out = tmp_path / budget
        assert main(solve_args(g, out, "--budget", budget, "--budget-mode", "abs")) == EXIT_OK
        assert read_report(out)["tdi_percent"] == 0.0


def test_solve_then_validate_round_trip(skip4_file, tmp_path, capsys):
    out = tmp_path / "r"
    main(solve_args(skip4_file, out, "--budget", "1.0"))
    capsys.readouterr()
    code = main(["validate", "--schedule", str(out / "schedule.json"), "--graph", str(skip4_file), "--budget", "1.0"])
    assert code == EXIT_OK
    assert "OK" in capsys.readouterr().out


def test_validate_reports_precedence(skip4_file, tmp_path, capsys):
    out = tmp_path / "r"
    main(solve_args(skip4_file, out, "--budget", "1.0"))
    doc = json.loads((out / "schedule.json").read_text())
    doc["events"][0]["node"], doc["events"][1]["node"] = doc["events"][1]["node"], doc["events"][0]["node"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    capsys.readouterr()
    code = main(["validate", "--schedule", str(bad), "--graph", str(skip4_file), "--budget", "3", "--budget-mode", "abs"])
    assert code != EXIT_OK
    assert "PRECEDENCE_UNSERVED" in capsys.readouterr().out


def test_validate_reports_memory(skip4_file, tmp_path, capsys):
    out = tmp_path / "r"
    main(solve_args(skip4_file, out, "--budget", "1.0"))
    capsys.readouterr()
    code = main(["validate", "--schedule", str(out / "schedule.json"), "--graph", str(skip4_file),
                 "--budget", "2", "--budget-mode", "abs"])
    assert code != EXIT_OK
    assert "MEMORY_EXCEEDED" in capsys.readouterr().out


def test_report_is_reproducible(tmp_path):
    g = tmp_path / "g.json"
    g.write_text(dumps_graph(random_layered(LayeredSpec(14, 4, p_skip=0.2, seed=2))))
    docs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        main(solve_args(g, out, "--budget", "0.8", "--seed", "4"))
        rep = read_report(out)
        rep.pop("timing")
        docs.append(json.dumps(rep, indent=2).encode())
    assert docs[0] == docs[1]


def test_manifest_and_staged_mode(skip4_file, tmp_path):
    out = tmp_path / "m"
    manifest = tmp_path / "run.json"
    manifest.write_text(json.dumps({
        "graph": str(skip4_file), "budget": 3, "budget_mode": "abs", "mode": "staged",
        "time_limit": 5, "out": str(out), "cap_overrides": {"1": 3},
    }))
    assert main(["solve", "--manifest", str(manifest)]) == EXIT_OK
    rep = read_report(out)
    assert rep["mode"] == "staged" and rep["objective"] == 4 and rep["cap_overrides"] == {"1": 3}


def test_trace_path_flag(skip4_file, tmp_path):
    trace = tmp_path / "progress.csv"
    main(solve_args(skip4_file, tmp_path / "r", "--budget", "1.0", "--trace", str(trace)))
    assert trace.read_text().startswith("elapsed_seconds,")


@pytest.mark.parametrize(
    "extra",
    [["--budget", "1.5"], ["--budget", "0"], ["--budget", "2.5", "--budget-mode", "abs"], ["--budget", "1", "--cap", "0"]],
)
def test_bad_manifest_values(skip4_file, tmp_path, extra):
    assert main(solve_args(skip4_file, tmp_path / "r", *extra)) == EXIT_ERROR


def test_missing_graph(tmp_path):
    assert main(solve_args(tmp_path / "nope.json", tmp_path / "r", "--budget", "1")) == EXIT_ERROR


def test_unknown_cap_override(skip4_file, tmp_path):
    assert main(solve_args(skip4_file, tmp_path / "r", "--budget", "1", "--cap-override", "zz=3")) == EXIT_ERROR


def test_bench(skip4_file, tmp_path, capsys):
    g2 = tmp_path / "chain.json"
    g2.write_text(dumps_graph(chain(5)))
    spec = tmp_path / "bench.json"
    spec.write_text(json.dumps({
        "graphs": [{"name": "skip4", "path": skip4_file.name}, {"name": "chain", "path": "chain.json"},
                   {"name": "missing", "path": "nope.json"}],
        "budgets": [0.9, 1.0],
        "time_limits": [2],
    }))
    capsys.readouterr()
    assert main(["bench", str(spec)]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 6
    assert [r["graph"] for r in rows] == ["chain"] * 2 + ["missing"] * 2 + ["skip4"] * 2
    chain_budgets = [int(r["budget"]) for r in rows if r["graph"] == "chain"]
    assert chain_budgets == sorted(chain_budgets, reverse=True)
    assert all(r["status"] == "UNKNOWN" for r in rows if r["graph"] == "missing")
    for r in rows:
        if r["status"] in ("OPTIMAL", "FEASIBLE"):
            assert int(r["peak_memory"]) <= int(r["budget"])
            assert r["tdi_percent"] == "0.0"


def test_simulate_and_oracle(skip4_file, capsys):
    assert main(["simulate", "--graph", str(skip4_file), "--sequence", "1,2,3,1,4"]) == EXIT_OK
    assert "peak=3 duration=5" in capsys.readouterr().out
    assert main(["simulate", "--graph", str(skip4_file), "--sequence", "2,1,3,4"]) == EXIT_INVALID
    assert main(["oracle", "--graph", str(skip4_file), "--budget", "3", "--budget-mode", "abs"]) == EXIT_OK
    assert "objective=4" in capsys.readouterr().out
    assert main(["oracle", "--graph", str(skip4_file), "--budget", "2", "--budget-mode", "abs"]) == EXIT_INFEASIBLE


def test_generate(tmp_path):
    out = tmp_path / "g.json"
    assert main(["generate", "layered", "--nodes", "30", "--edges", "60", "--seed", "1", "--out", str(out)]) == EXIT_OK
    g = json.loads(out.read_text())
    assert len(g["nodes"]) == 30
    assert main(["generate", "layered", "--nodes", "30"]) == EXIT_ERROR


def test_console_module_entry(skip4_file, tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "rematsched.cli", *solve_args(skip4_file, tmp_path / "r", "--budget", "0.66")],
        capture_output=True, text=True,
    )
    assert res.returncode == EXIT_INFEASIBLE
    assert "status=INFEASIBLE" in res.stdout
