"""Correlation thresholding of covariance matrices with a PSD-preserving correction.

Every off-diagonal pair ``(i, j)`` whose correlation magnitude falls below
``tau`` is removed by adding ``v v^T`` with ``v_i = sqrt(|S_ij|)``,
``v_j = -sign(S_ij) v_i`` and zeros elsewhere. That zeroes ``S_ij`` and raises
both diagonal entries by ``|S_ij|``; as a sum of rank-1 PSD terms the
correction can only increase the eigenvalues.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SparsifyPolicy:
    tau: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValueError(f"tau must lie in [0, 1), got {self.tau}")


def correlation(Sigma, i, j):
    """Correlation coefficient of entries `i` and `j`; zero when a variance is not positive."""
    Sigma = np.asarray(Sigma, dtype=float)
    denom = Sigma[i, i] * Sigma[j, j]
    if denom <= 0.0:
        return 0.0
    return float(Sigma[i, j] / np.sqrt(denom))


def correlation_matrix(Sigma):
    """Correlations of a (stack of) covariance matrices with zero-variance rows set to 0."""
    Sigma = np.asarray(Sigma, dtype=float)
    d = np.diagonal(Sigma, axis1=-2, axis2=-1)
    scale = np.sqrt(np.where(d > 0.0, d, 0.0))
    denom = scale[..., :, None] * scale[..., None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(denom > 0.0, Sigma / np.where(denom > 0.0, denom, 1.0), 0.0)
    return rho


def weak_pairs(Sigma, tau):
    """Boolean mask of off-diagonal entries with ``|rho| < tau`` (on the input matrix)."""
    rho = correlation_matrix(Sigma)
    K = rho.shape[-1]
    return (np.abs(rho) < tau) & ~np.eye(K, dtype=bool)


def threshold_covariance(Sigma, policy=SparsifyPolicy()):
    """Return a thresholded copy of `Sigma` (a matrix or a stack ``(..., K, K)``).

    All correlations are computed on the original matrix before any entry
    changes, so the result does not depend on the order in which pairs are
    visited.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    out = Sigma.copy()
    if not policy.enabled or Sigma.shape[-1] < 2:
        return out
    mask = weak_pairs(Sigma, policy.tau)
    removed = np.where(mask, np.abs(Sigma), 0.0)
    out[mask] = 0.0
    K = Sigma.shape[-1]
    diag = np.arange(K)
    out[..., diag, diag] += removed.sum(axis=-1)
    return out


def rank_one_corrections(Sigma, policy=SparsifyPolicy()):
    """The individual ``v`` vectors (row-major pair order) that :func:`threshold_covariance` adds."""
    Sigma = np.asarray(Sigma, dtype=float)
    mask = weak_pairs(Sigma, policy.tau) if policy.enabled else np.zeros(Sigma.shape, bool)
    K = Sigma.shape[0]
    vs = []
    for i in range(K):
        for j in range(i + 1, K):
            if mask[i, j] and Sigma[i, j] != 0.0:
                v = np.zeros(K)
                v[i] = np.sqrt(abs(Sigma[i, j]))
                v[j] = -np.sign(Sigma[i, j]) * v[i]
                vs.append(v)
    return vs
