"""Command-line front end: ``robust-oed {solve,bruteforce,gradcheck,report}``.

Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 a gradient
check exceeded its tolerance.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import oracle
from .config import ConfigError, ExperimentConfig, build_problem, load_config, to_ini
from .model import ModelError, noise_covariance, noise_covariance_derivative
from .objective import OEDProblem, fim_trace, grad_lambda
from .optimizer import IterationRecord, SampleSet, robust_solve
from .policy import (BernoulliPolicy, all_designs, design_index, design_probabilities,
                     log_prob_gradient)
from .weighting import weighted_precision

log = logging.getLogger("robust_oed")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

TRACE_FIELDS = ["iteration", "psi_outer", "psi_inner", "appended", "lambda_new",
                "new_evaluations", "new_outer_evaluations", "redundancy_ratio",
                "outer_redundancy_ratio", "sample_set_size", "outer_converged",
                "inner_converged", "perturbed", "theta"]


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _vec(x) -> str:
    return ";".join(repr(float(v)) for v in np.asarray(x).ravel())


def _trace_row(rec: IterationRecord) -> list:
    return [rec.iteration, repr(rec.psi_outer), repr(rec.psi_inner), int(rec.appended),
            _vec(rec.lambda_new), rec.new_evaluations, rec.new_outer_evaluations,
            repr(rec.redundancy_ratio), repr(rec.outer_redundancy_ratio),
            rec.sample_set_size, int(rec.outer_converged), int(rec.inner_converged),
            int(rec.perturbed), _vec(rec.theta)]


def _bits(z) -> str:
    return "".join(str(int(b)) for b in z)


def _load(args) -> tuple[ExperimentConfig, OEDProblem, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.solver.seed = args.seed
    out = Path(args.out or cfg.output.directory)
    problem = build_problem(cfg)
    return cfg, problem, out


def cmd_solve(args) -> int:
    cfg, problem, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / "config_effective.ini", to_ini(cfg))
    partial = out / "trace.partial.csv"
    t0 = time.perf_counter()
    with open(partial, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)

        def on_iteration(rec):
            writer.writerow(_trace_row(rec))
            fh.flush()
            log.info("iter %3d  psi_outer=%.6g  psi_inner=%.6g  |S|=%d  new=%d",
                     rec.iteration, rec.psi_outer, rec.psi_inner,
                     rec.sample_set_size, rec.new_evaluations)

        res = robust_solve(problem, cfg.solver, callback=on_iteration)
    os.replace(partial, out / "trace.csv")
    worst = oracle.worst_case_value(res.design, list(res.sample_set), problem)
    record = {
        "design": [int(b) for b in res.design],
        "design_bits": _bits(res.design),
        "design_index": design_index(res.design),
        "objective_at_final_lambda": res.objective,
        "worst_case_objective": worst,
        "theta": [float(t) for t in res.policy.theta],
        "policy_degenerate": res.policy.is_degenerate,
        "final_lambda": [float(v) for v in res.final_lambda],
        "sample_set": [[float(v) for v in lam] for lam in res.sample_set],
        "final_samples": [_bits(z) for z in res.final_samples],
        "final_values": [float(v) for v in res.final_values],
        "iterations": len(res.trace),
        "termination": res.trace.termination,
        "n_sensors": problem.n_sensors,
        "seed": cfg.solver.seed,
    }
    write_atomic(out / "result.json", json.dumps(record, indent=2) + "\n")
    report = oracle.redundancy_report(res.cache, res.trace)
    write_atomic(out / "redundancy.json", json.dumps(report, indent=2) + "\n")
    log.info("design %s (index %d), worst-case objective %.10g, %d iterations (%s), %.1fs",
             record["design_bits"], record["design_index"], worst, len(res.trace),
             res.trace.termination, time.perf_counter() - t0)
    if not args.quiet:
        print(json.dumps({k: record[k] for k in ("design_bits", "worst_case_objective",
                                                 "iterations", "termination")}))
    return EXIT_OK


def cmd_bruteforce(args) -> int:
    cfg, problem, out = _load(args)
    if problem.n_sensors > oracle.MAX_SENSORS:
        raise ConfigError(f"brute force needs at most {oracle.MAX_SENSORS} sensors, "
                          f"config has {problem.n_sensors}", args.config)
    result_path = out / "result.json"
    solved = None
    if result_path.exists():
        solved = json.loads(result_path.read_text())
        scenarios = SampleSet(np.array(solved["sample_set"]))
    else:
        scenarios = SampleSet.default(problem)
    bf = oracle.brute_force_maxmin(scenarios, problem)
    write_atomic(out / "bruteforce.csv", bf.to_csv())
    summary = {
        "optimum_index": bf.optimum_index,
        "optimum_bits": _bits(bf.optimum_design),
        "optimum_value": bf.optimum_value,
        "n_designs": int(bf.designs.shape[0]),
        "n_zero_penalty": int(np.sum(bf.penalties == 0)),
        "n_scenarios": len(scenarios),
    }
    write_atomic(out / "bruteforce.json", json.dumps(summary, indent=2) + "\n")
    if solved is not None:
        k = int(solved["design_index"])
        got = float(bf.min_values[k - 1])
        gap = bf.optimum_value - got
        line = (f"solver_index={k} solver_worst_case={got!r} optimum_index={bf.optimum_index} "
                f"optimum={bf.optimum_value!r} gap={gap!r} "
                f"relative_gap={gap / abs(bf.optimum_value)!r}\n")
        write_atomic(out / "optimality_gap.txt", line)
    if not args.quiet:
        print(json.dumps(summary))
    return EXIT_OK


def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a - b))


def gradient_checks(problem: OEDProblem, seed: int = 0, n_pairs: int = 20,
                    fault: str | None = None) -> list[dict]:
    """Finite-difference and enumeration checks of every analytic gradient.

    ``fault='sign-flip'`` negates the analytic noise gradient so the checks
    can be shown to fail.
    """
    rng = np.random.default_rng(seed)
    nm = problem.noise
    n = problem.n_sensors
    lo, hi = nm.lambda_lo, nm.lambda_hi
    h = 1e-6
    sign = -1.0 if fault == "sign-flip" else 1.0
    rows = []

    def interior_lambda():
        return rng.uniform(lo + 2 * h, hi - 2 * h, n)

    worst = 0.0
    for _ in range(n_pairs):
        z = rng.integers(0, 2, n)
        if not z.any():
            z[rng.integers(n)] = 1
        lam = interior_lambda()
        g = sign * grad_lambda(z, lam, problem)
        fd = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fd[i] = (fim_trace(z, lam + e, problem) - fim_trace(z, lam - e, problem)) / (2 * h)
        worst = max(worst, _rel(g, fd))
    rows.append({"check": "grad_lambda_vs_central_fd", "error": worst, "tolerance": 1e-5})

    zero = sign * grad_lambda(np.zeros(n, dtype=int), interior_lambda(), problem)
    rows.append({"check": "grad_lambda_zero_design", "error": float(np.abs(zero).max()),
                 "tolerance": 0.0})

    worst = 0.0
    for _ in range(5):
        lam = interior_lambda()
        i = int(rng.integers(n))
        e = np.zeros(n)
        e[i] = h
        fd = (noise_covariance(nm, lam + e) - noise_covariance(nm, lam - e)) / (2 * h)
        worst = max(worst, float(np.abs(fd - noise_covariance_derivative(nm, lam, i)).max()))
    rows.append({"check": "noise_covariance_derivative_vs_fd", "error": worst,
                 "tolerance": 1e-8})

    worst = 0.0
    nt = nm.n_obs_times
    for _ in range(5):
        z = rng.integers(0, 2, n)
        lam = interior_lambda()
        G = noise_covariance(nm, lam)
        dG = rng.standard_normal(G.shape)
        dG = 0.5 * (dG + dG.T) * 1e-4
        W = weighted_precision(z, G, nt)
        d = np.tile(z, nt).astype(float)
        predicted = -sign * W @ (d[:, None] * dG * d[None, :]) @ W
        fd = (weighted_precision(z, G + h * dG, nt) - W) / h
        if np.linalg.norm(predicted) > 0:
            worst = max(worst, _rel(fd, predicted))
    rows.append({"check": "pseudoinverse_directional_derivative", "error": worst,
                 "tolerance": 1e-4})

    m = min(n, 10)
    sub = np.arange(m)
    Z = all_designs(m)
    full = np.zeros((Z.shape[0], n), dtype=np.int8)
    full[:, sub] = Z
    f = oracle.evaluate_table(full, list(SampleSet.default(problem)), problem).min(axis=1)
    pol = BernoulliPolicy(rng.uniform(0.1, 0.9, m))
    p = design_probabilities(pol)
    score = log_prob_gradient(Z, pol)
    by_score = sign * (p[:, None] * f[:, None] * score).sum(axis=0)
    exact = np.empty(m)
    for i in range(m):
        on = Z[:, i] == 1
        # the expectation is affine in theta_i
        exact[i] = (np.sum(p[on] * f[on]) / pol.theta[i]
                    - np.sum(p[~on] * f[~on]) / (1 - pol.theta[i]))
    rows.append({"check": "score_function_unbiasedness", "error": _rel(by_score, exact),
                 "tolerance": 1e-10})
    rows.append({"check": "score_identity", "error": float(np.abs(
        (p[:, None] * score).sum(axis=0)).max()), "tolerance": 1e-12})

    for r in rows:
        r["passed"] = bool(r["error"] <= r["tolerance"])
    return rows


def cmd_gradcheck(args) -> int:
    cfg, problem, out = _load(args)
    rows = gradient_checks(problem, seed=cfg.solver.seed, fault=args.fault)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "error", "tolerance", "passed"])
    for r in rows:
        w.writerow([r["check"], repr(r["error"]), repr(r["tolerance"]), int(r["passed"])])
    write_atomic(out / "gradcheck.csv", buf.getvalue())
    if not args.quiet:
        for r in rows:
            print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['check']:40s} "
                  f"error={r['error']:.3e}  tol={r['tolerance']:.0e}")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_CHECK


def _find_runs(root: Path) -> list[Path]:
    return sorted(p.parent for p in root.rglob("trace.csv"))


def cmd_report(args) -> int:
    root = Path(args.run_dir)
    if not root.is_dir():
        raise ConfigError(f"run directory {root} does not exist")
    runs = _find_runs(root)
    if not runs:
        raise ConfigError(f"no runs (trace.csv files) found under {root}")
    out = Path(args.out) if args.out else root
    obj = [["run", "iteration", "psi_outer", "psi_inner"]]
    new = [["run", "iteration", "new_evaluations", "new_outer_evaluations"]]
    red = [["run", "n_sensors", "iterations", "overall_redundancy_ratio",
            "outer_redundancy_ratio"]]
    for run in runs:
        name = str(run.relative_to(root)) if run != root else "."
        with open(run / "trace.csv", newline="") as fh:
            trace = list(csv.DictReader(fh))
        for row in trace:
            obj.append([name, row["iteration"], row["psi_outer"], row["psi_inner"]])
            new.append([name, row["iteration"], row["new_evaluations"],
                        row["new_outer_evaluations"]])
        n_sensors = ""
        if (run / "result.json").exists():
            n_sensors = json.loads((run / "result.json").read_text())["n_sensors"]
        overall = outer = ""
        if (run / "redundancy.json").exists():
            rr = json.loads((run / "redundancy.json").read_text())
            overall, outer = rr["overall_redundancy_ratio"], rr["outer_redundancy_ratio"]
        elif trace:
            overall = trace[-1]["redundancy_ratio"]
            outer = trace[-1]["outer_redundancy_ratio"]
        red.append([name, n_sensors, len(trace), overall, outer])

    def render(rows):
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(rows)
        return buf.getvalue()

    write_atomic(out / "objective_vs_iteration.csv", render(obj))
    write_atomic(out / "new_evals_vs_iteration.csv", render(new))
    write_atomic(out / "redundancy_vs_cardinality.csv", render(red))
    if not args.quiet:
        print(render(red), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-oed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment configuration file")
            p.add_argument("--seed", type=int, help="override [solver] seed")
        p.add_argument("--out", help="output directory (default: [output] directory)")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("solve", help="run the robust stochastic solver"))
    common(sub.add_parser("bruteforce", help="exhaustive max-min over all designs"))
    p = sub.add_parser("gradcheck", help="finite-difference and enumeration checks")
    common(p)
    p.add_argument("--fault", choices=["sign-flip"], help=argparse.SUPPRESS)
    p = sub.add_parser("report", help="aggregate traces of finished runs")
    p.add_argument("run_dir")
    common(p, needs_config=False)
    return parser


COMMANDS = {"solve": cmd_solve, "bruteforce": cmd_bruteforce,
            "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
