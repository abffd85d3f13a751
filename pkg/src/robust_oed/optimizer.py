"""Sampled max-min alternation and the robust stochastic OED solver.

The outer problem ascends the expected worst-case objective over the
Bernoulli policy parameters with a baseline-corrected score-function
gradient. The inner problem descends the ensemble-averaged objective over
the noise parameter inside its box. Every new inner solution is appended
to the finite scenario set the outer problem minimizes over.
"""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .objective import OEDProblem, ObjectiveValue, grad_lambda, objective
from .policy import (BernoulliPolicy, EPS, design_index, optimal_baseline,
                     sample, score_gradient)

log = logging.getLogger(__name__)

LAMBDA_DECIMALS = 12
DEDUP_TOL = 1e-10
ARMIJO_C1 = 1e-4


def lambda_key(lam) -> bytes:
    return np.round(np.asarray(lam, dtype=float), LAMBDA_DECIMALS).tobytes()


@dataclass
class SolverConfig:
    gamma1: float = 1e-4
    outer_steps_per_call: int = 5
    max_iterations: int = 100
    tol: float = 1e-8
    pgtol: float = 1e-8
    n_ens: int = 32
    n_b: int = 32
    m_final: int = 5
    seed: int = 0
    inner_max_iter: int = 50
    max_perturbations: int = 3
    perturbation: float = 0.1
    patience: int = 2
    use_cache: bool = True

    def __post_init__(self):
        for name in ("gamma1", "tol", "pgtol", "perturbation"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("n_ens", "n_b", "m_final", "inner_max_iter", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("outer_steps_per_call", "max_iterations", "max_perturbations"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


class SampleSet:
    """Ordered finite set of noise parameters with max-norm deduplication."""

    def __init__(self, params: Iterable = (), tol: float = DEDUP_TOL):
        self.tol = tol
        self._params: list[np.ndarray] = []
        self._keys: list[bytes] = []
        for lam in params:
            self.add(lam)

    @classmethod
    def default(cls, problem: OEDProblem) -> "SampleSet":
        """Lower corner, midpoint, upper corner of the noise box."""
        nm = problem.noise
        n = nm.n_sensors
        return cls([np.full(n, nm.lambda_lo), nm.midpoint, np.full(n, nm.lambda_hi)])

    def find(self, lam) -> int | None:
        lam = np.asarray(lam, dtype=float)
        for k, p in enumerate(self._params):
            if np.max(np.abs(p - lam)) <= self.tol:
                return k
        return None

    def add(self, lam) -> bool:
        """Append ``lam`` unless an existing member is within tolerance."""
        if self.find(lam) is not None:
            return False
        lam = np.array(lam, dtype=float)
        lam.setflags(write=False)
        self._params.append(lam)
        self._keys.append(lambda_key(lam))
        return True

    def mean(self) -> np.ndarray:
        return np.mean(self._params, axis=0)

    def copy(self) -> "SampleSet":
        return SampleSet(self._params, self.tol)

    @property
    def keys(self) -> list[bytes]:
        return self._keys

    def as_array(self) -> np.ndarray:
        return np.array(self._params)

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def __getitem__(self, k):
        return self._params[k]


class EvaluationCache:
    """Memo table from ``(design, lambda)`` to :class:`ObjectiveValue`.

    Requests are tallied per category (``outer``, ``inner``, ``final``) so
    the outer-loop redundancy can be reported separately. With
    ``enabled=False`` nothing is stored and every request is evaluated, but
    distinct keys are still tracked so the counters (and anything that
    depends on them) match a cached run.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._store: dict = {}
        self._seen: set = set()
        self._lock = threading.Lock()
        self.total_requests = 0
        self.unique_evaluations = 0
        self.evaluator_calls = 0
        self.requests_by_category: dict[str, int] = {}
        self.unique_by_category: dict[str, int] = {}

    def request(self, key, evaluate: Callable[[], ObjectiveValue],
                count: int = 1, category: str = "outer") -> ObjectiveValue:
        with self._lock:
            self.total_requests += count
            self.requests_by_category[category] = (
                self.requests_by_category.get(category, 0) + count)
            if self.enabled and key in self._store:
                return self._store[key]
        value = evaluate()
        with self._lock:
            self.evaluator_calls += 1
            if key not in self._seen:
                self._seen.add(key)
                self.unique_evaluations += 1
                self.unique_by_category[category] = (
                    self.unique_by_category.get(category, 0) + 1)
            if self.enabled:
                # first writer wins
                return self._store.setdefault(key, value)
        return value

    def __contains__(self, key):
        return key in self._store

    def __len__(self):
        return len(self._store)

    @property
    def redundancy_ratio(self) -> float:
        if self.total_requests == 0:
            return 0.0
        return 1.0 - self.unique_evaluations / self.total_requests

    def category_ratio(self, category: str) -> float:
        total = self.requests_by_category.get(category, 0)
        if total == 0:
            return 0.0
        return 1.0 - self.unique_by_category.get(category, 0) / total


def cached_objective(cache: EvaluationCache, design, lam,
                     evaluator: Callable[[np.ndarray, np.ndarray], ObjectiveValue],
                     category: str = "outer") -> ObjectiveValue:
    key = (design_index(design), lambda_key(lam))
    return cache.request(key, lambda: evaluator(design, lam), 1, category)


class Evaluator:
    """Cached objective evaluation over batches of designs."""

    def __init__(self, problem: OEDProblem, cache: EvaluationCache | None = None):
        self.problem = problem
        self.cache = cache if cache is not None else EvaluationCache()
        self._pow = 1 << np.arange(problem.n_sensors, dtype=np.int64)

    def _codes(self, designs: np.ndarray) -> np.ndarray:
        return np.asarray(designs, dtype=np.int64) @ self._pow

    def value(self, design, lam, category: str = "outer") -> float:
        return cached_objective(self.cache, design, lam,
                                lambda z, l: objective(z, l, self.problem),
                                category).total

    def _unique_values(self, designs, lams, keys, category):
        codes = self._codes(designs)
        uniq, first, inv, counts = np.unique(codes, return_index=True,
                                             return_inverse=True, return_counts=True)
        table = np.empty((uniq.size, len(lams)))
        for u in range(uniq.size):
            z = designs[first[u]]
            c = int(counts[u])
            for j, (lam, key) in enumerate(zip(lams, keys)):
                table[u, j] = self.cache.request(
                    (int(uniq[u]) + 1, key),
                    lambda z=z, lam=lam: objective(z, lam, self.problem),
                    c, category).total
        return table, inv

    def min_over_set(self, designs: np.ndarray, sample_set: SampleSet,
                     category: str = "outer") -> tuple[np.ndarray, np.ndarray]:
        """Worst-case value of each design over the scenario set and the
        index of the (first) minimizing scenario."""
        table, inv = self._unique_values(designs, list(sample_set), sample_set.keys,
                                         category)
        arg = np.argmin(table, axis=1)
        return table[np.arange(table.shape[0]), arg][inv], arg[inv]

    def values_at(self, designs: np.ndarray, lam, category: str = "inner") -> np.ndarray:
        table, inv = self._unique_values(designs, [lam], [lambda_key(lam)], category)
        return table[inv, 0]

    def mean_value(self, designs: np.ndarray, lam, category: str = "inner") -> float:
        return float(np.mean(self.values_at(designs, lam, category)))

    def mean_grad(self, designs: np.ndarray, lam) -> np.ndarray:
        codes = self._codes(designs)
        uniq, first, counts = np.unique(codes, return_index=True, return_counts=True)
        g = np.zeros(self.problem.n_sensors)
        for u in range(uniq.size):
            g += counts[u] * grad_lambda(designs[first[u]], lam, self.problem)
        return g / designs.shape[0]


@dataclass
class IterationRecord:
    iteration: int
    psi_outer: float
    psi_inner: float
    lambda_new: np.ndarray
    appended: bool
    new_evaluations: int
    new_outer_evaluations: int
    redundancy_ratio: float
    outer_redundancy_ratio: float
    theta: np.ndarray
    sample_set_size: int
    outer_converged: bool
    inner_converged: bool
    perturbed: bool = False


@dataclass
class SolverTrace:
    records: list[IterationRecord] = field(default_factory=list)
    termination: str = "not started"
    seeds: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.records)


@dataclass
class OuterResult:
    policy: BernoulliPolicy
    converged: bool
    steps: int
    psi: float | None


@dataclass
class InnerResult:
    lam: np.ndarray
    value: float
    designs: np.ndarray
    converged: bool
    warning: bool
    iterations: int


def _seed_stream(seed: int):
    rng = np.random.default_rng(seed)
    while True:
        yield int(rng.integers(0, 2 ** 63 - 1))


def stoc_param_opt(policy0: BernoulliPolicy, sample_set: SampleSet,
                   evaluator: Evaluator, cfg: SolverConfig, seeds) -> OuterResult:
    """A few projected stochastic-ascent steps on the policy parameters."""
    if len(sample_set) == 0:
        raise ValueError("scenario set is empty")
    policy = policy0
    psi_prev = None
    psi = None
    for n in range(cfg.outer_steps_per_call):
        S = sample(policy, cfg.n_ens * cfg.n_b, next(seeds))
        values, _ = evaluator.min_over_set(S.designs, sample_set, "outer")
        b = optimal_baseline(S.designs, values, policy, cfg.n_ens)
        g = score_gradient(policy, S.designs, values, b)
        psi = float(np.mean(values))
        t = policy.theta
        pg = np.where(((t >= 1 - EPS) & (g > 0)) | ((t <= EPS) & (g < 0)), 0.0, g)
        if np.max(np.abs(pg)) <= cfg.pgtol:
            return OuterResult(policy, True, n, psi)
        if psi_prev is not None and abs(psi - psi_prev) < cfg.tol:
            return OuterResult(policy, True, n, psi)
        policy = BernoulliPolicy(t + cfg.gamma1 * g)
        psi_prev = psi
    return OuterResult(policy, False, cfg.outer_steps_per_call, psi)


def projected_gradient_descent(f: Callable[[np.ndarray], float],
                               grad: Callable[[np.ndarray], np.ndarray],
                               x0: np.ndarray, lo: float, hi: float,
                               pgtol: float, tol: float, max_iter: int):
    """Box-constrained descent with Armijo backtracking along the projection arc.

    Returns ``(x, f(x), converged, warning, iterations)``.
    """
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    fx = f(x)
    for it in range(max_iter):
        g = grad(x)
        pg = np.clip(x - g, lo, hi) - x
        if np.max(np.abs(pg)) <= pgtol:
            return x, fx, True, False, it
        step = (hi - lo) / np.max(np.abs(g))
        while True:
            cand = np.clip(x - step * g, lo, hi)
            fc = f(cand)
            if fc <= fx + ARMIJO_C1 * np.dot(g, cand - x):
                break
            step *= 0.5
            if step * np.max(np.abs(g)) < 1e-14 * (hi - lo):
                log.warning("line search failed at iteration %d", it)
                return x, fx, False, True, it
        decrease = fx - fc
        x, fx = cand, fc
        if decrease < tol:
            return x, fx, True, False, it + 1
    return x, fx, False, False, max_iter


def noise_opt(policy: BernoulliPolicy, sample_set: SampleSet, evaluator: Evaluator,
              cfg: SolverConfig, seed: int) -> InnerResult:
    """Minimize the ensemble-averaged objective over the noise box."""
    if len(sample_set) == 0:
        raise ValueError("scenario set is empty")
    nm = evaluator.problem.noise
    S = sample(policy, cfg.n_ens, seed).designs
    lam0 = np.clip(sample_set.mean(), nm.lambda_lo, nm.lambda_hi)
    lam, val, conv, warn, its = projected_gradient_descent(
        lambda l: evaluator.mean_value(S, l, "inner"),
        lambda l: evaluator.mean_grad(S, l),
        lam0, nm.lambda_lo, nm.lambda_hi, cfg.pgtol, cfg.tol, cfg.inner_max_iter)
    return InnerResult(lam, val, S, conv, warn, its)


def generic_maxmin(inner_min: Callable, outer_max: Callable,
                   initial_set: SampleSet, max_iter: int = 100):
    """Alternate ``outer_max(scenarios)`` and ``inner_min(solution)`` until the
    inner step stops producing new scenarios."""
    scenarios = initial_set.copy()
    solution = None
    for _ in range(max_iter):
        solution = outer_max(scenarios)
        lam = inner_min(solution)
        if not scenarios.add(lam):
            break
    return solution, scenarios


@dataclass
class SolveResult:
    design: np.ndarray
    policy: BernoulliPolicy
    trace: SolverTrace
    sample_set: SampleSet
    cache: EvaluationCache
    final_lambda: np.ndarray
    objective: float
    final_samples: np.ndarray
    final_values: np.ndarray


def select_best(designs: np.ndarray, values: np.ndarray) -> int:
    """Row of the largest value; ties go to the smallest design index."""
    order = sorted(range(len(values)), key=lambda k: (-values[k], design_index(designs[k])))
    return order[0]


def robust_solve(problem: OEDProblem, cfg: SolverConfig | None = None,
                 initial_sample: SampleSet | None = None,
                 policy0: BernoulliPolicy | None = None,
                 callback: Callable[[IterationRecord], None] | None = None) -> SolveResult:
    """Robust binary design by alternating policy ascent and noise descent."""
    cfg = cfg or SolverConfig()
    cache = EvaluationCache(enabled=cfg.use_cache)
    ev = Evaluator(problem, cache)
    scenarios = (initial_sample.copy() if initial_sample is not None
                 else SampleSet.default(problem))
    if len(scenarios) == 0:
        raise ValueError("initial scenario set is empty")
    policy = policy0 or BernoulliPolicy.uniform(problem.n_sensors)
    seeds = _seed_stream(cfg.seed)
    perturb_rng = np.random.default_rng(next(seeds))
    trace = SolverTrace(seeds=[cfg.seed])
    lam_last = scenarios[len(scenarios) - 1]
    perturbations = 0
    stalls = 0
    trace.termination = "max_iterations"

    for it in range(1, cfg.max_iterations + 1):
        unique0 = cache.unique_evaluations
        outer0 = cache.unique_by_category.get("outer", 0)
        outer = stoc_param_opt(policy, scenarios, ev, cfg, seeds)
        policy = outer.policy
        inner = noise_opt(policy, scenarios, ev, cfg, next(seeds))
        psi_outer = float(np.mean(ev.min_over_set(inner.designs, scenarios, "outer")[0]))
        appended = scenarios.add(inner.lam)
        lam_last = inner.lam
        rec = IterationRecord(
            iteration=it, psi_outer=psi_outer, psi_inner=inner.value,
            lambda_new=inner.lam, appended=appended,
            new_evaluations=cache.unique_evaluations - unique0,
            new_outer_evaluations=cache.unique_by_category.get("outer", 0) - outer0,
            redundancy_ratio=cache.redundancy_ratio,
            outer_redundancy_ratio=cache.category_ratio("outer"),
            theta=policy.theta.copy(), sample_set_size=len(scenarios),
            outer_converged=outer.converged, inner_converged=inner.converged)
        trace.records.append(rec)
        if outer.converged and not appended and rec.new_evaluations == 0:
            if policy.is_degenerate or perturbations >= cfg.max_perturbations:
                stalls += 1
            else:
                # stalled at an interior point: kick the policy and keep going
                kick = cfg.perturbation * perturb_rng.choice([-1.0, 1.0], problem.n_sensors)
                policy = BernoulliPolicy(policy.theta + kick)
                perturbations += 1
                rec.perturbed = True
                stalls = 0
        else:
            stalls = 0
        if callback:
            callback(rec)
        if stalls >= cfg.patience:
            trace.termination = "converged"
            break

    final = sample(policy, cfg.m_final, next(seeds)).designs
    vals = ev.values_at(final, lam_last, "final")
    best = select_best(final, vals)
    return SolveResult(final[best].copy(), policy, trace, scenarios, cache,
                       np.asarray(lam_last), float(vals[best]), final, vals)
