"""Product-Bernoulli design policy and its score-function gradient."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .weighting import as_design

EPS = 1e-3
MAX_ENUMERATION = 20


@dataclass(frozen=True)
class BernoulliPolicy:
    """Independent activation probabilities, clipped to ``[EPS, 1 - EPS]``."""

    theta: np.ndarray

    def __post_init__(self):
        t = np.clip(np.asarray(self.theta, dtype=float), EPS, 1.0 - EPS)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("theta must be a nonempty vector")
        if np.any(np.isnan(t)):
            raise ValueError("theta contains NaN")
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)

    @classmethod
    def uniform(cls, n: int, p: float = 0.5) -> "BernoulliPolicy":
        return cls(np.full(n, p))

    @property
    def n_sensors(self) -> int:
        return self.theta.size

    def at_bounds(self) -> np.ndarray:
        return (self.theta <= EPS) | (self.theta >= 1.0 - EPS)

    @property
    def is_degenerate(self) -> bool:
        return bool(np.all(self.at_bounds()))

    def mode(self) -> np.ndarray:
        return (self.theta > 0.5).astype(np.int8)


@dataclass(frozen=True)
class DesignSample:
    designs: np.ndarray  # (n, n_sensors) int8
    seed: int

    def __len__(self):
        return self.designs.shape[0]


def sample(policy: BernoulliPolicy, n: int, seed: int) -> DesignSample:
    if n < 1:
        raise ValueError("sample size must be at least 1")
    rng = np.random.default_rng(seed)
    u = rng.random((n, policy.n_sensors))
    return DesignSample((u < policy.theta).astype(np.int8), int(seed))


def log_prob_gradient(design, policy: BernoulliPolicy) -> np.ndarray:
    """Score ``d/dtheta log P(design | theta)``; accepts one design or a stack."""
    z = np.asarray(design, dtype=float)
    t = policy.theta
    return z / t + (z - 1.0) / (1.0 - t)


def log_prob(design, policy: BernoulliPolicy) -> np.ndarray:
    z = np.asarray(design, dtype=float)
    t = policy.theta
    return np.sum(z * np.log(t) + (1.0 - z) * np.log1p(-t), axis=-1)


def design_index(design) -> int:
    """One-based enumeration index ``1 + sum_i z_i 2**(i-1)``."""
    z = as_design(design)
    return 1 + int(np.dot(z.astype(np.int64), 1 << np.arange(z.size, dtype=np.int64)))


def design_from_index(k: int, n: int) -> np.ndarray:
    return ((k - 1) >> np.arange(n) & 1).astype(np.int8)


def all_designs(n: int) -> np.ndarray:
    """Every binary design of length ``n``; row ``k - 1`` has index ``k``."""
    if n > MAX_ENUMERATION:
        raise ValueError(f"refusing to enumerate 2**{n} designs (limit {MAX_ENUMERATION})")
    k = np.arange(2 ** n, dtype=np.int64)
    return ((k[:, None] >> np.arange(n)) & 1).astype(np.int8)


def design_probabilities(policy: BernoulliPolicy) -> np.ndarray:
    Z = all_designs(policy.n_sensors)
    return np.exp(log_prob(Z, policy))


def exact_expectation(policy: BernoulliPolicy, f: Callable[[np.ndarray], float]) -> float:
    """Sum of ``f(z) P(z | theta)`` over all ``2**n`` designs."""
    Z = all_designs(policy.n_sensors)
    p = np.exp(log_prob(Z, policy))
    vals = np.array([f(z) for z in Z], dtype=float)
    return float(np.sum(p * vals))


def optimal_baseline(designs: np.ndarray, values, policy: BernoulliPolicy,
                     n_ens: int) -> float:
    """Batched estimate of the variance-minimizing constant baseline.

    ``designs`` holds ``n_b`` consecutive batches of ``n_ens`` rows. The
    estimate is the sum over batches of ``(sum_j v_j s_j) . (sum_j s_j)``
    divided by ``n_ens * n_b * sum_i 1 / (theta_i - theta_i**2)``, where
    ``s_j`` is the score of design ``j``.
    """
    Z = np.asarray(designs)
    v = np.asarray(values, dtype=float)
    if Z.shape[0] == 0 or Z.shape[0] % n_ens:
        raise ValueError(f"{Z.shape[0]} designs do not split into batches of {n_ens}")
    n_b = Z.shape[0] // n_ens
    S = log_prob_gradient(Z, policy).reshape(n_b, n_ens, -1)
    V = v.reshape(n_b, n_ens, 1)
    num = np.sum(np.sum(V * S, axis=1) * np.sum(S, axis=1))
    t = policy.theta
    den = n_ens * n_b * np.sum(1.0 / (t - t * t))
    return float(num / den)


def score_gradient(policy: BernoulliPolicy, designs: np.ndarray, values,
                   baseline: float = 0.0) -> np.ndarray:
    """Sample mean of ``(v - b) * score`` over the rows of ``designs``."""
    Z = np.asarray(designs)
    v = np.asarray(values, dtype=float)
    if Z.shape[0] == 0:
        raise ValueError("empty design sample")
    S = log_prob_gradient(Z, policy)
    return np.sum((v - baseline)[:, None] * S, axis=0) / Z.shape[0]


def stochastic_gradient(policy: BernoulliPolicy, samples: DesignSample,
                        value_fn: Callable[[np.ndarray], float],
                        baseline: float = 0.0) -> np.ndarray:
    values = [value_fn(z) for z in samples.designs]
    return score_gradient(policy, samples.designs, values, baseline)
