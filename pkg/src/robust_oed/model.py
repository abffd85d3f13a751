"""Linear Gaussian inverse problem: forward operator, prior, and noise model.

The reference forward operator is a finite-difference advection-diffusion
surrogate on the unit square. The parameter is the initial concentration at
every grid node; observations are concentrations at a few sensor nodes at a
sequence of observation times, stacked time-major.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ModelError(ValueError):
    """Raised when a model component cannot be constructed or evaluated."""


@dataclass(frozen=True)
class LinearForwardModel:
    """Dense parameter-to-observable map with time-major row ordering.

    Rows ``t * n_sensors + s`` hold the observation of sensor ``s`` at the
    ``t``-th observation time. The adjoint is the plain transpose (identity
    mass matrix).
    """

    matrix: np.ndarray
    n_sensors: int
    n_obs_times: int

    def __post_init__(self):
        F = np.asarray(self.matrix, dtype=float)
        if F.ndim != 2:
            raise ModelError("forward matrix must be two-dimensional")
        if self.n_sensors < 1 or self.n_obs_times < 1:
            raise ModelError("n_sensors and n_obs_times must be positive")
        if F.shape[0] != self.n_sensors * self.n_obs_times:
            raise ModelError(
                f"forward matrix has {F.shape[0]} rows, expected "
                f"{self.n_sensors} x {self.n_obs_times} = "
                f"{self.n_sensors * self.n_obs_times}")
        F.setflags(write=False)
        object.__setattr__(self, "matrix", F)

    @property
    def n_obs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_params(self) -> int:
        return self.matrix.shape[1]

    def apply_forward(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        return self.matrix.T @ v


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    precision: np.ndarray
    precision_trace: float = field(init=False)

    def __post_init__(self):
        P = np.asarray(self.precision, dtype=float)
        m = np.asarray(self.mean, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ModelError("prior precision must be square")
        if m.shape != (P.shape[0],):
            raise ModelError("prior mean length does not match precision")
        scale = max(np.abs(P).max(), 1.0)
        if np.abs(P - P.T).max() > 1e-12 * scale:
            raise ModelError("prior precision is not symmetric")
        try:
            np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise ModelError("prior precision is not positive definite") from exc
        P.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "precision", P)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "precision_trace", float(np.trace(P)))

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision)


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal observation noise ``I_nt (x) diag(lambda**2)`` on a box."""

    lambda_lo: float
    lambda_hi: float
    n_sensors: int
    n_obs_times: int

    def __post_init__(self):
        if not (0.0 < self.lambda_lo < self.lambda_hi):
            raise ModelError(
                f"noise box requires 0 < lambda_lo < lambda_hi, got "
                f"[{self.lambda_lo}, {self.lambda_hi}]")
        if self.n_sensors < 1 or self.n_obs_times < 1:
            raise ModelError("n_sensors and n_obs_times must be positive")

    @property
    def n_obs(self) -> int:
        return self.n_sensors * self.n_obs_times

    @property
    def midpoint(self) -> np.ndarray:
        return np.full(self.n_sensors, 0.5 * (self.lambda_lo + self.lambda_hi))

    def check(self, lam) -> np.ndarray:
        """Validate ``lam`` against the box and return it as a float array."""
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.n_sensors,):
            raise ModelError(
                f"lambda must have {self.n_sensors} entries, got shape {lam.shape}")
        if np.any(lam < self.lambda_lo) or np.any(lam > self.lambda_hi):
            raise ModelError(
                f"lambda outside the box [{self.lambda_lo}, {self.lambda_hi}]: {lam}")
        return lam


def noise_covariance(nm: NoiseModel, lam) -> np.ndarray:
    lam = nm.check(lam)
    return np.diag(np.tile(lam ** 2, nm.n_obs_times))


def noise_covariance_derivative(nm: NoiseModel, lam, i: int) -> np.ndarray:
    """Derivative of :func:`noise_covariance` with respect to ``lam[i]``.

    ``i`` is a zero-based sensor index.
    """
    lam = nm.check(lam)
    if not 0 <= i < nm.n_sensors:
        raise ModelError(f"sensor index {i} out of range [0, {nm.n_sensors})")
    d = np.zeros(nm.n_sensors)
    d[i] = 2.0 * lam[i]
    return np.diag(np.tile(d, nm.n_obs_times))


def posterior_params(model: LinearForwardModel, prior: GaussianPrior,
                     noise_cov: np.ndarray, data) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of the linear Gaussian problem."""
    F = model.matrix
    y = np.asarray(data, dtype=float)
    if y.shape != (model.n_obs,):
        raise ModelError(f"data must have length {model.n_obs}")
    try:
        cf = scipy.linalg.cho_factor(noise_cov)
        FtRinv = scipy.linalg.cho_solve(cf, F).T
        H = FtRinv @ F + prior.precision
        H = 0.5 * (H + H.T)
        hf = scipy.linalg.cho_factor(H)
    except np.linalg.LinAlgError as exc:
        raise ModelError("posterior system is singular") from exc
    cov = scipy.linalg.cho_solve(hf, np.eye(H.shape[0]))
    cov = 0.5 * (cov + cov.T)
    mean = scipy.linalg.cho_solve(hf, prior.precision @ prior.mean + FtRinv @ y)
    return mean, cov


# --- finite-difference surrogate -------------------------------------------

def grid_laplacian(grid_n: int, h: float = 1.0) -> sp.csr_matrix:
    """Five-point Neumann Laplacian (positive semidefinite) on a square grid.

    Node ``(ix, iy)`` has flat index ``iy * grid_n + ix``.
    """
    main = np.full(grid_n, 2.0)
    main[[0, -1]] = 1.0
    L1 = sp.diags([main, -np.ones(grid_n - 1), -np.ones(grid_n - 1)],
                  [0, -1, 1], format="csr")
    eye = sp.identity(grid_n, format="csr")
    return ((sp.kron(eye, L1) + sp.kron(L1, eye)) / h ** 2).tocsr()


def _upwind_1d(grid_n: int, v: float, h: float) -> sp.csr_matrix:
    # inflow node copies itself into the ghost cell, so its row is zero
    if v == 0.0:
        return sp.csr_matrix((grid_n, grid_n))
    D = sp.lil_matrix((grid_n, grid_n))
    if v > 0:
        for i in range(1, grid_n):
            D[i, i] = v / h
            D[i, i - 1] = -v / h
    else:
        for i in range(grid_n - 1):
            D[i, i] = -v / h
            D[i, i + 1] = v / h
    return D.tocsr()


def step_matrix(grid_n: int, kappa: float, velocity: Sequence[float],
                dt: float) -> sp.csr_matrix:
    """Implicit-Euler system matrix ``I + dt (kappa L + A_upwind)``."""
    h = 1.0 / (grid_n - 1)
    eye = sp.identity(grid_n, format="csr")
    A = (sp.kron(eye, _upwind_1d(grid_n, float(velocity[0]), h))
         + sp.kron(_upwind_1d(grid_n, float(velocity[1]), h), eye))
    L = grid_laplacian(grid_n, h)
    return (sp.identity(grid_n * grid_n) + dt * (kappa * L + A)).tocsr()


def observation_steps(n_obs_times: int, dt: float, t1: float) -> list[int]:
    """Time-step counts at which observations are taken (``t1 + s*dt``)."""
    first = int(round(t1 / dt))
    if abs(first * dt - t1) > 1e-9 * max(1.0, t1):
        raise ModelError(f"t1={t1} is not a multiple of dt={dt}")
    return [first + s for s in range(n_obs_times)]


def build_reference_model(grid_n: int, n_obs_times: int, kappa: float,
                          velocity: Sequence[float], sensor_coords,
                          dt: float, t1: float) -> LinearForwardModel:
    """Assemble the advection-diffusion parameter-to-observable matrix.

    Parameters
    ----------
    grid_n : int
        Nodes per side of the uniform grid on ``[0, 1]^2``.
    n_obs_times : int
        Number of observation instants ``t1, t1 + dt, ...``.
    kappa : float
        Diffusivity; zero gives pure advection.
    velocity : pair of float
        Constant advection velocity.
    sensor_coords : sequence of (ix, iy)
        Interior grid nodes holding the candidate sensors.
    dt, t1 : float
        Time step and first observation time; ``t1`` must be a multiple
        of ``dt``.

    Returns
    -------
    LinearForwardModel
        ``F`` of shape ``(n_sensors * n_obs_times, grid_n**2)``.
    """
    if grid_n < 4:
        raise ModelError("grid_n must be at least 4")
    if kappa < 0:
        raise ModelError("kappa must be nonnegative")
    if dt <= 0:
        raise ModelError("dt must be positive")
    if t1 < 0:
        raise ModelError("t1 must be nonnegative")
    if n_obs_times < 1:
        raise ModelError("n_obs_times must be at least 1")
    if len(velocity) != 2:
        raise ModelError("velocity must have two components")
    coords = [tuple(int(c) for c in xy) for xy in sensor_coords]
    if not coords:
        raise ModelError("at least one sensor is required")
    if len(set(coords)) != len(coords):
        raise ModelError("sensor coordinates must be distinct")
    for ix, iy in coords:
        if not (0 < ix < grid_n - 1 and 0 < iy < grid_n - 1):
            raise ModelError(f"sensor ({ix}, {iy}) is not an interior grid node")

    steps = observation_steps(n_obs_times, dt, t1)
    n_param = grid_n * grid_n
    idx = [iy * grid_n + ix for ix, iy in coords]

    # rows of F are propagated backwards through the transposed step matrix
    lu = spla.splu(step_matrix(grid_n, kappa, velocity, dt).T.tocsc())
    X = np.zeros((n_param, len(coords)))
    X[idx, np.arange(len(coords))] = 1.0
    rows = []
    done = 0
    for s in steps:
        while done < s:
            X = lu.solve(X)
            done += 1
        rows.append(X.T.copy())
    return LinearForwardModel(np.vstack(rows), len(coords), n_obs_times)


def build_laplacian_prior(grid_n: int, delta: float = 0.5,
                          scale: float = 1.0) -> GaussianPrior:
    """Prior with precision ``(delta I + L)^2 / scale``, zero mean.

    ``L`` is the unscaled five-point Neumann graph Laplacian.
    """
    if delta <= 0:
        raise ModelError("delta must be positive")
    if scale <= 0:
        raise ModelError("scale must be positive")
    A = (delta * sp.identity(grid_n * grid_n) + grid_laplacian(grid_n)).toarray()
    P = A @ A / scale
    return GaussianPrior(np.zeros(grid_n * grid_n), 0.5 * (P + P.T))


def default_sensor_layout(grid_n: int, n_sensors: int, seed: int = 0) -> list[tuple[int, int]]:
    """Distinct interior nodes drawn without replacement from a fixed stream."""
    interior = [(ix, iy) for iy in range(1, grid_n - 1) for ix in range(1, grid_n - 1)]
    if n_sensors > len(interior):
        raise ModelError("more sensors requested than interior nodes")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(interior), size=n_sensors, replace=False)
    return [interior[k] for k in pick]
