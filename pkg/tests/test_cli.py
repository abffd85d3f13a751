import csv
import json
import shutil

import pytest

from robust_oed.cli import main, write_atomic
from robust_oed.config import reference_config_path


def run(*argv):
    return main([*argv, "--quiet"])


def ref(n):
    return str(reference_config_path(n))


@pytest.fixture(scope="module")
def solved2(tmp_path_factory):
    out = tmp_path_factory.mktemp("s2")
    assert run("solve", "--config", ref(2), "--out", str(out)) == 0
    return out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_outputs(solved2):
    result = json.loads((solved2 / "result.json").read_text())
    assert result["design"] == [1, 1]
    assert result["termination"] == "converged"
    rows = read_rows(solved2 / "trace.csv")
    assert 1 <= len(rows) <= 100
    assert {"psi_outer", "psi_inner", "new_evaluations"} <= rows[0].keys()
    assert not (solved2 / "trace.partial.csv").exists()
    red = json.loads((solved2 / "redundancy.json").read_text())
    assert 0.0 <= red["outer_redundancy_ratio"] <= 1.0
    assert len(red["new_evaluations"]) == len(rows)
    assert (solved2 / "config_effective.ini").is_file()


def test_solve_is_reproducible(solved2, tmp_path):
    assert run("solve", "--config", ref(2), "--out", str(tmp_path)) == 0
    assert (tmp_path / "result.json").read_bytes() == (solved2 / "result.json").read_bytes()
    assert (tmp_path / "trace.csv").read_bytes() == (solved2 / "trace.csv").read_bytes()


def test_effective_config_reruns_identically(solved2, tmp_path):
    assert run("solve", "--config", str(solved2 / "config_effective.ini"),
               "--out", str(tmp_path)) == 0
    assert (tmp_path / "result.json").read_bytes() == (solved2 / "result.json").read_bytes()


def test_seed_override(tmp_path):
    assert run("solve", "--config", ref(2), "--out", str(tmp_path), "--seed", "5") == 0
    assert json.loads((tmp_path / "result.json").read_text())["seed"] == 5
    assert "seed = 5" in (tmp_path / "config_effective.ini").read_text()


def test_invalid_config_rejected_before_running(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[model]\nsensors = 3 4\n[noise]\nlambda_lo = 0.05\nlambda_hi = 0.04\n")
    out = tmp_path / "out"
    assert run("solve", "--config", str(cfg), "--out", str(out)) == 1
    assert "bad.ini:4:" in capsys.readouterr().err
    assert not out.exists()
    assert run("solve", "--config", str(tmp_path / "nope.ini"), "--out", str(out)) == 1


def test_bruteforce_five_sensors(tmp_path):
    assert run("bruteforce", "--config", ref(5), "--out", str(tmp_path)) == 0
    rows = read_rows(tmp_path / "bruteforce.csv")
    assert len(rows) == 32
    assert sum(int(r["is_optimal"]) for r in rows) == 1
    assert not (tmp_path / "optimality_gap.txt").exists()


def test_bruteforce_budget(tmp_path):
    assert run("bruteforce", "--config", ref(10), "--out", str(tmp_path)) == 0
    rows = read_rows(tmp_path / "bruteforce.csv")
    assert len(rows) == 1024
    assert sum(float(r["penalty"]) == 0.0 for r in rows) == 120


def test_bruteforce_gap_after_solve(solved2, tmp_path):
    out = tmp_path / "run"
    shutil.copytree(solved2, out)
    assert run("bruteforce", "--config", ref(2), "--out", str(out)) == 0
    line = (out / "optimality_gap.txt").read_text()
    assert "gap=0.0 " in line


def test_bruteforce_refuses_large(tmp_path, capsys):
    cfg = tmp_path / "big.ini"
    cfg.write_text("[model]\ngrid_n = 12\nn_sensors = 21\n")
    assert run("bruteforce", "--config", str(cfg), "--out", str(tmp_path)) == 1
    assert "at most 20 sensors" in capsys.readouterr().err


def test_gradcheck_passes(tmp_path):
    assert run("gradcheck", "--config", ref(5), "--out", str(tmp_path)) == 0
    rows = {r["check"]: r for r in read_rows(tmp_path / "gradcheck.csv")}
    assert all(r["passed"] == "1" for r in rows.values())
    assert float(rows["grad_lambda_vs_central_fd"]["error"]) <= 1e-5
    assert float(rows["grad_lambda_zero_design"]["error"]) == 0.0


def test_gradcheck_detects_sign_flip(tmp_path):
    assert run("gradcheck", "--config", ref(5), "--out", str(tmp_path),
               "--fault", "sign-flip") == 3
    rows = {r["check"]: r for r in read_rows(tmp_path / "gradcheck.csv")}
    assert rows["grad_lambda_vs_central_fd"]["passed"] == "0"


def test_report_single_run(solved2, tmp_path):
    root = tmp_path / "runs"
    shutil.copytree(solved2, root / "only")
    assert run("report", str(root)) == 0
    trace = read_rows(solved2 / "trace.csv")
    obj = read_rows(root / "objective_vs_iteration.csv")
    assert [r["psi_outer"] for r in obj] == [r["psi_outer"] for r in trace]
    new = read_rows(root / "new_evals_vs_iteration.csv")
    assert [r["new_evaluations"] for r in new] == [r["new_evaluations"] for r in trace]
    red = read_rows(root / "redundancy_vs_cardinality.csv")
    assert len(red) == 1 and red[0]["n_sensors"] == "2"


def test_report_empty_directory(tmp_path, capsys):
    assert run("report", str(tmp_path)) == 1
    assert "no runs" in capsys.readouterr().err


def test_report_three_cardinalities(solved2, tmp_path):
    root = tmp_path / "runs"
    shutil.copytree(solved2, root / "n2")
    for n in (5, 10):
        cfg = tmp_path / f"c{n}.ini"
        text = open(ref(n)).read().replace("[solver]\n", "[solver]\nmax_iterations = 3\n")
        cfg.write_text(text)
        assert run("solve", "--config", str(cfg), "--out", str(root / f"n{n}")) == 0
    assert run("report", str(root)) == 0
    red = read_rows(root / "redundancy_vs_cardinality.csv")
    assert sorted(int(r["n_sensors"]) for r in red) == [2, 5, 10]
    for r in red:
        rr = json.loads((root / r["run"] / "redundancy.json").read_text())
        assert float(r["outer_redundancy_ratio"]) == rr["outer_redundancy_ratio"]
        assert 0.0 <= float(r["overall_redundancy_ratio"]) <= 1.0


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "a" / "x.txt"
    write_atomic(target, "hello\n")
    assert target.read_text() == "hello\n"
    assert [p.name for p in target.parent.iterdir()] == ["x.txt"]


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "robust_oed", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("solve", "bruteforce", "gradcheck", "report"):
        assert cmd in r.stdout


def test_runtime_failure_keeps_partial_trace(tmp_path, monkeypatch):
    import robust_oed.cli as cli
    from robust_oed.optimizer import robust_solve

    def failing_solve(problem, cfg, callback=None):
        def stop_after_one(rec):
            callback(rec)
            raise RuntimeError("solver blew up")
        return robust_solve(problem, cfg, callback=stop_after_one)

    monkeypatch.setattr(cli, "robust_solve", failing_solve)
    assert run("solve", "--config", ref(2), "--out", str(tmp_path)) == 2
    rows = read_rows(tmp_path / "trace.partial.csv")
    assert len(rows) == 1 and rows[0]["iteration"] == "1"
    assert not (tmp_path / "result.json").exists()
    assert not (tmp_path / "trace.csv").exists()
