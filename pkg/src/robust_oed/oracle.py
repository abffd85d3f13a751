"""Exhaustive max-min search and nominal-value search for small instances.

The objective is recomputed here from the model alone: the weighted
precision comes from an SVD pseudoinverse of the masked noise covariance and
the penalty is re-derived, so the table is an independent check of the
optimizer's evaluation path.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .model import noise_covariance

MAX_SENSORS = 20


def _enumerate(n: int) -> np.ndarray:
    if n > MAX_SENSORS:
        raise ValueError(
            f"brute force over 2**{n} designs refused; at most {MAX_SENSORS} sensors")
    k = np.arange(2 ** n, dtype=np.int64)
    return ((k[:, None] >> np.arange(n)) & 1).astype(np.int8)


def _penalty_values(designs: np.ndarray, pen) -> np.ndarray:
    k = designs.sum(axis=1).astype(float)
    kind = getattr(pen.kind, "value", pen.kind)
    if kind == "l0_squared":
        return k ** 2
    if kind == "budget":
        return np.abs(k - pen.budget)
    return np.zeros_like(k)


def _utility_table(designs: np.ndarray, lams, problem, include_prior: bool) -> np.ndarray:
    F = problem.model.matrix
    FFt = F @ F.T
    nt = problem.noise.n_obs_times
    masks = np.tile(designs, (1, nt)).astype(float)
    out = np.empty((designs.shape[0], len(lams)))
    for j, lam in enumerate(lams):
        G = noise_covariance(problem.noise, lam)
        masked = masks[:, :, None] * G[None] * masks[:, None, :]
        W = np.linalg.pinv(masked, hermitian=True)
        out[:, j] = np.einsum("dij,ji->d", W, FFt)
    if include_prior:
        out += np.trace(problem.prior.precision)
    return out


def evaluate_table(designs, lams, problem, include_prior: bool = True) -> np.ndarray:
    """``J(design, lam)`` for every row of ``designs`` and every ``lam``."""
    designs = np.atleast_2d(np.asarray(designs, dtype=np.int8))
    lams = [np.asarray(l, dtype=float) for l in lams]
    U = _utility_table(designs, lams, problem, include_prior)
    return U - problem.penalty.alpha * _penalty_values(designs, problem.penalty)[:, None]


def worst_case_value(design, lams, problem) -> float:
    return float(evaluate_table([design], lams, problem).min())


@dataclass
class BruteForceResult:
    designs: np.ndarray         # (2**n, n), row k-1 has design index k
    lambdas: np.ndarray         # (L, n)
    values: np.ndarray          # (2**n, L)
    penalties: np.ndarray       # (2**n,)
    min_values: np.ndarray
    argmin: np.ndarray
    optimum_index: int          # one-based design index
    optimum_value: float

    @property
    def optimum_design(self) -> np.ndarray:
        return self.designs[self.optimum_index - 1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["design_index", "design_bits"]
                   + [f"J_lambda_{j}" for j in range(self.values.shape[1])]
                   + ["penalty", "min_value", "argmin_lambda", "is_optimal"])
        for r in range(self.designs.shape[0]):
            w.writerow([r + 1, "".join(str(int(b)) for b in self.designs[r])]
                       + [repr(float(v)) for v in self.values[r]]
                       + [repr(float(self.penalties[r])), repr(float(self.min_values[r])),
                          int(self.argmin[r]), int(r + 1 == self.optimum_index)])
        return buf.getvalue()


def brute_force_maxmin(sample_set, problem, include_prior: bool = True) -> BruteForceResult:
    """Max over all binary designs of the min over the scenario set."""
    lams = [np.asarray(l, dtype=float) for l in sample_set]
    if not lams:
        raise ValueError("scenario set is empty")
    Z = _enumerate(problem.n_sensors)
    pen = _penalty_values(Z, problem.penalty)
    V = _utility_table(Z, lams, problem, include_prior) - problem.penalty.alpha * pen[:, None]
    arg = np.argmin(V, axis=1)
    mins = V[np.arange(V.shape[0]), arg]
    best = int(np.argmax(mins))  # first maximizer = smallest design index
    return BruteForceResult(Z, np.array(lams), V, pen, mins, arg, best + 1, float(mins[best]))


def nominal_solve(lambda_nominal, problem) -> np.ndarray:
    """Exhaustive argmax of the objective at a single noise parameter."""
    lam = problem.noise.check(lambda_nominal)
    Z = _enumerate(problem.n_sensors)
    v = evaluate_table(Z, [lam], problem)[:, 0]
    return Z[int(np.argmax(v))].copy()


def redundancy_report(cache, trace) -> dict:
    """Redundancy ratios and the per-iteration count of new evaluations."""
    return {
        "total_requests": cache.total_requests,
        "unique_evaluations": cache.unique_evaluations,
        "overall_redundancy_ratio": cache.redundancy_ratio,
        "outer_requests": cache.requests_by_category.get("outer", 0),
        "outer_unique": cache.unique_by_category.get("outer", 0),
        "outer_redundancy_ratio": cache.category_ratio("outer"),
        "new_evaluations": [r.new_evaluations for r in trace.records],
        "new_outer_evaluations": [r.new_outer_evaluations for r in trace.records],
    }
