"""A-optimal utility, sparsity penalties, and the noise-parameter gradient."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import (GaussianPrior, LinearForwardModel, NoiseModel,
                    noise_covariance, noise_covariance_derivative)
from .weighting import active_observations, as_design, weighted_precision


class PenaltyKind(str, enum.Enum):
    NONE = "none"
    L0_SQUARED = "l0_squared"
    BUDGET = "budget"


@dataclass(frozen=True)
class PenaltyConfig:
    kind: PenaltyKind = PenaltyKind.NONE
    alpha: float = 0.0
    budget: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind(self.kind))
        if self.alpha < 0:
            raise ValueError("penalty weight alpha must be nonnegative")
        if self.kind is PenaltyKind.BUDGET and self.budget < 1:
            raise ValueError("budget must be at least 1")


@dataclass(frozen=True)
class ObjectiveValue:
    utility: float
    penalty: float
    total: float


@dataclass(frozen=True)
class OEDProblem:
    """Everything needed to evaluate ``J(design, lambda)``."""

    model: LinearForwardModel
    prior: GaussianPrior
    noise: NoiseModel
    penalty: PenaltyConfig = PenaltyConfig()

    def __post_init__(self):
        if self.model.n_sensors != self.noise.n_sensors:
            raise ValueError("model and noise model disagree on n_sensors")
        if self.model.n_obs_times != self.noise.n_obs_times:
            raise ValueError("model and noise model disagree on n_obs_times")
        if self.model.n_params != self.prior.precision.shape[0]:
            raise ValueError("prior dimension does not match the forward model")
        G = self.model.matrix @ self.model.matrix.T
        G.setflags(write=False)
        object.__setattr__(self, "_gram", G)

    @property
    def n_sensors(self) -> int:
        return self.model.n_sensors

    @property
    def gram(self) -> np.ndarray:
        """Observation-space Gram matrix ``F F^*``."""
        return self._gram


def _data_trace(design, lam, problem: OEDProblem):
    # Tr(F* W F) = sum(W o F F*), restricted to the active block
    nt = problem.noise.n_obs_times
    W = weighted_precision(design, noise_covariance(problem.noise, lam), nt)
    idx = active_observations(design, nt)
    Wa = W[np.ix_(idx, idx)]
    Ga = problem.gram[np.ix_(idx, idx)]
    return float(np.sum(Wa * Ga)), W, idx


def fim_trace(design, lam, problem: OEDProblem) -> float:
    """Trace of the Fisher information ``F* W(design; lam) F + Gamma_pr^{-1}``."""
    data_term, _, _ = _data_trace(as_design(design), lam, problem)
    return data_term + problem.prior.precision_trace


def penalty(design, cfg: PenaltyConfig) -> float:
    k = int(as_design(design).sum())
    if cfg.kind is PenaltyKind.L0_SQUARED:
        return float(k * k)
    if cfg.kind is PenaltyKind.BUDGET:
        return float(abs(k - cfg.budget))
    return 0.0


def objective(design, lam, problem: OEDProblem) -> ObjectiveValue:
    u = fim_trace(design, lam, problem)
    p = penalty(design, problem.penalty)
    return ObjectiveValue(u, p, u - problem.penalty.alpha * p)


def grad_lambda(design, lam, problem: OEDProblem) -> np.ndarray:
    """Gradient of :func:`fim_trace` with respect to the noise parameter.

    Uses ``dW = -W dGamma_masked W``, so component ``j`` equals
    ``-Tr(F* W (D dGamma_j D) W F)`` where ``D`` is the time-replicated
    design mask. The penalty does not depend on ``lam``.
    """
    z = as_design(design)
    lam = problem.noise.check(lam)
    grad = np.zeros(z.size)
    _, W, idx = _data_trace(z, lam, problem)
    if idx.size == 0:
        return grad
    Wa = W[np.ix_(idx, idx)]
    M = Wa @ problem.gram[np.ix_(idx, idx)] @ Wa
    for j in np.flatnonzero(z):
        dG = noise_covariance_derivative(problem.noise, lam, j)[np.ix_(idx, idx)]
        grad[j] = -np.sum(M * dG)
    return grad
