"""Design-weighted observation precision matrices.

For a binary design the weighted precision is the Moore-Penrose
pseudoinverse of the masked noise covariance. It is always realized by
restricting to the active observation entries and inverting that block;
no SVD is involved.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp


class WeightingError(ValueError):
    pass


def as_design(design) -> np.ndarray:
    """Return ``design`` as an int8 0/1 vector, rejecting anything else."""
    z = np.asarray(design)
    if z.ndim != 1:
        raise WeightingError("design must be a vector")
    if not np.all((z == 0) | (z == 1)):
        raise WeightingError(f"design entries must be 0 or 1: {z}")
    return z.astype(np.int8)


def active_observations(design, n_obs_times: int) -> np.ndarray:
    """Time-major indices of observations taken by active sensors."""
    z = as_design(design)
    active = np.flatnonzero(z)
    n = z.size
    return (np.arange(n_obs_times)[:, None] * n + active[None, :]).ravel()


def restriction_matrix(design, n_obs_times: int) -> sp.csr_matrix:
    z = as_design(design)
    if n_obs_times < 1:
        raise WeightingError("n_obs_times must be positive")
    cols = active_observations(z, n_obs_times)
    n_obs = z.size * n_obs_times
    data = np.ones(cols.size)
    return sp.csr_matrix((data, (np.arange(cols.size), cols)),
                         shape=(cols.size, n_obs))


def _is_diagonal(M: np.ndarray) -> bool:
    return not np.any(M - np.diag(np.diagonal(M)))


def _masked_inverse(block: np.ndarray) -> np.ndarray:
    try:
        cf = scipy.linalg.cho_factor(block)
    except np.linalg.LinAlgError as exc:
        raise WeightingError("active covariance block is singular") from exc
    return scipy.linalg.cho_solve(cf, np.eye(block.shape[0]))


def weighted_precision(design, noise_cov: np.ndarray, n_obs_times: int) -> np.ndarray:
    """``P^T (P Gamma P^T)^{-1} P`` for the restriction ``P`` of ``design``."""
    idx = active_observations(design, n_obs_times)
    G = np.asarray(noise_cov, dtype=float)
    if G.shape != (as_design(design).size * n_obs_times,) * 2:
        raise WeightingError(f"noise covariance has shape {G.shape}")
    W = np.zeros_like(G)
    if idx.size == 0:
        return W
    if _is_diagonal(G):
        d = G[idx, idx]
        if np.any(d <= 0):
            raise WeightingError("active covariance block is singular")
        W[idx, idx] = 1.0 / d
        return W
    W[np.ix_(idx, idx)] = _masked_inverse(G[np.ix_(idx, idx)])
    return W


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1:
        raise WeightingError("weights must be a vector")
    if np.any(w < 0) or np.any(w > 1):
        raise WeightingError(f"weights must lie in [0, 1]: {w}")
    return w


def relaxed_weight_matrix(weights, n_obs_times: int) -> np.ndarray:
    """Pointwise weighting matrix with ``w_i w_j`` off the diagonal and
    ``1/w_i**2`` (or 0 when ``w_i == 0``) on it, replicated over time."""
    w = np.tile(_check_weights(weights), n_obs_times)
    Om = np.outer(w, w)
    diag = np.zeros_like(w)
    nz = w != 0
    diag[nz] = 1.0 / w[nz] ** 2
    np.fill_diagonal(Om, diag)
    return Om


def relaxed_weighted_precision(weights, noise_cov: np.ndarray,
                               n_obs_times: int) -> np.ndarray:
    """Pseudoinverse of the Hadamard product ``Omega(w) * Gamma``."""
    w = _check_weights(weights)
    G = np.asarray(noise_cov, dtype=float)
    A = relaxed_weight_matrix(w, n_obs_times) * G
    idx = np.flatnonzero(np.tile(w, n_obs_times))
    W = np.zeros_like(G)
    if idx.size:
        W[np.ix_(idx, idx)] = _masked_inverse(A[np.ix_(idx, idx)])
    return W
