"""Slow brute-force reference computations used by the tests.

Nothing here calls the learner or forecaster; only the factorization and
Gaussian-product primitives of :mod:`loadhmm.gaussian` are shared.
"""
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.stats import norm

from .gaussian import fuse_gaussians, solve_spd, symmetrize

MAX_ORACLE_K = 3
MAX_ORACLE_L = 6


@dataclass
class History:
    """Feature/load pairs ``(U[j], S[j])``, oldest first."""

    U: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        if self.U.shape[0] != self.S.shape[0] or self.U.shape[0] < 1:
            raise ValueError("history needs n >= 1 matching rows")

    def __len__(self):
        return self.U.shape[0]


def _weights(n, lam):
    return lam ** np.arange(n - 1, -1, -1, dtype=float)


def weighted_gram(U, lam, prior=True):
    """``sum_j lam^(n-j) u_j u_j^T``, plus ``lam^n I`` when `prior` is set.

    The extra term is exactly what an identity initial ``P`` contributes to
    the recursion after ``n`` discounted steps.
    """
    U = np.atleast_2d(U)
    n, d = U.shape
    w = _weights(n, lam)
    G = (U * w[:, None]).T @ U
    if prior:
        G = G + lam ** n * np.eye(d)
    return symmetrize(G)


def _batch_mean(U, S, lam, prior):
    w = _weights(U.shape[0], lam)
    Q = (S * w[:, None]).T @ U
    G = weighted_gram(U, lam, prior)
    return solve_spd(G, Q.T, jitter=False).T


def batch_weighted_mle(history, lam, mode="prior"):
    """Weighted ML estimates ``(M, Sigma)`` from the whole history at once.

    ``M = (sum w s u^T)(sum w u u^T)^-1`` and
    ``Sigma = sum w (s - M u)(s - M u)^T / sum w`` with ``w_j = lam^(n-j)``.

    Parameters
    ----------
    history : History
    lam : float
    mode : {"prior", "pure"}
        ``"prior"`` adds ``lam^n I`` to the Gram matrix, reproducing the
        identity initialization of the recursion exactly; ``"pure"`` does not
        and needs a nonsingular Gram.
    """
    if mode not in ("prior", "pure"):
        raise ValueError("mode must be 'prior' or 'pure'")
    U, S = history.U, history.S
    M = _batch_mean(U, S, lam, mode == "prior")
    w = _weights(len(history), lam)
    resid = S - U @ M.T
    Sigma = (resid * w[:, None]).T @ resid / w.sum()
    return M, symmetrize(Sigma)


def sequential_residual_covariance(history, lam, mode="prior"):
    """``sum_j lam^(n-j) r_j r_j^T / sum_j lam^(n-j)`` with ``r_j = s_j - M_j u_j``.

    Each ``M_j`` is the batch mean estimate from the first ``j`` pairs, so
    every residual is taken against the mean fitted up to its own time rather
    than against the final one.
    """
    U, S = history.U, history.S
    n, K = S.shape
    acc = np.zeros((K, K))
    for j in range(n):
        Mj = _batch_mean(U[:j + 1], S[:j + 1], lam, mode == "prior")
        r = S[j] - Mj @ U[j]
        acc = lam * acc + np.outer(r, r)
    return symmetrize(acc / _weights(n, lam).sum())


def _step_params(bank, c, u_r):
    i = c - 1
    M_s = bank.transition.M[i]
    return (M_s[:, 0], M_s[:, 1:], bank.transition.Sigma[i],
            bank.observation.M[i] @ u_r, bank.observation.Sigma[i])


def _check_bounds(bank, L):
    if bank.K > MAX_ORACLE_K or L > MAX_ORACLE_L:
        raise ValueError(
            f"oracle limited to K <= {MAX_ORACLE_K} and L <= {MAX_ORACLE_L} (got K={bank.K}, L={L})"
        )


def joint_conditional_forecast(bank, s_t, features, types, method="joint"):
    """Exact ``p(s_{t+i} | s_t, r_{t+1:t+i})`` for every ``i``; returns ``(means, covs)``.

    ``method="joint"`` builds, for each ``i``, the information form of the
    joint density of ``s_{t+1..t+i}`` from all transition and observation
    factors up to ``i`` and reads off the last block of its inverse.
    ``method="sequential"`` alternates marginalization of the previous state and
    fusion with the observation factor, each done through
    :func:`loadhmm.gaussian.fuse_gaussians`.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    types = [int(c) for c in types]
    L = len(types)
    _check_bounds(bank, L)
    s_t = np.asarray(s_t, dtype=float)
    if method == "joint":
        return _joint_information(bank, s_t, features, types)
    if method == "sequential":
        return _sequential_fusion(bank, s_t, features, types)
    raise ValueError("method must be 'joint' or 'sequential'")


def _joint_information(bank, s_t, features, types):
    K, L = bank.K, len(types)
    means, covs = np.empty((L, K)), np.empty((L, K, K))
    for i in range(1, L + 1):
        n = i * K
        Lam = np.zeros((n, n))
        eta = np.zeros(n)
        for j in range(i):
            b, A, Ss, m_r, Sr = _step_params(bank, types[j], features[j])
            Ss_inv = solve_spd(Ss, np.eye(K), jitter=False)
            Sr_inv = solve_spd(Sr, np.eye(K), jitter=False)
            blk = slice(j * K, (j + 1) * K)
            if j == 0:
                Lam[blk, blk] += Ss_inv
                eta[blk] += Ss_inv @ (b + A @ s_t)
            else:
                H = np.zeros((K, n))
                H[:, (j - 1) * K:j * K] = -A
                H[:, blk] = np.eye(K)
                Lam += H.T @ Ss_inv @ H
                eta += H.T @ Ss_inv @ b
            Lam[blk, blk] += Sr_inv
            eta[blk] += Sr_inv @ m_r
        cov_all = solve_spd(symmetrize(Lam), np.eye(n), jitter=False)
        mean_all = cov_all @ eta
        last = slice((i - 1) * K, i * K)
        means[i - 1] = mean_all[last]
        covs[i - 1] = symmetrize(cov_all[last, last])
    return means, covs


def _sequential_fusion(bank, s_t, features, types):
    K, L = bank.K, len(types)
    means, covs = np.empty((L, K)), np.empty((L, K, K))
    mean, cov = s_t, None
    for i, c in enumerate(types):
        b, A, Ss, m_r, Sr = _step_params(bank, c, features[i])
        if cov is None:
            prior_mean, prior_cov = b + A @ mean, Ss
        else:
            # integrate out the previous state: its evidence is the predictive for s - b
            _, evidence = fuse_gaussians(mean, cov, A, Ss, np.zeros(K))
            prior_mean, prior_cov = b + evidence.mean, evidence.cov
        posterior, _ = fuse_gaussians(prior_mean, prior_cov, np.eye(K), Sr, m_r)
        mean, cov = posterior.mean, posterior.cov
        means[i], covs[i] = mean, cov
    return means, covs


def transition_rollforward(bank, s_t, types):
    """Means and covariances from the transition model alone (no observation factors)."""
    K = bank.K
    mean, cov = np.asarray(s_t, dtype=float), np.zeros((K, K))
    means, covs = [], []
    for c in types:
        M_s = bank.transition.M[c - 1]
        A = M_s[:, 1:]
        mean = M_s[:, 0] + A @ mean
        cov = bank.transition.Sigma[c - 1] + A @ cov @ A.T
        means.append(mean)
        covs.append(cov)
    return np.array(means), np.array(covs)


def quadrature_crps(mu, sigma, s):
    """CRPS by adaptive quadrature of ``(F(y) - 1{y >= s})^2``.

    The integration range covers ``[mu - 10 sigma, mu + 10 sigma]`` and is
    stretched to include `s`; the integrand is split at `s`.
    """
    if sigma <= 0:
        raise ValueError("quadrature CRPS needs sigma > 0")
    lo = min(mu - 10.0 * sigma, s)
    hi = max(mu + 10.0 * sigma, s)
    below, _ = integrate.quad(lambda y: norm.cdf(y, mu, sigma) ** 2, lo, s,
                              epsabs=1e-10, epsrel=1e-12, limit=200)
    above, _ = integrate.quad(lambda y: norm.sf(y, mu, sigma) ** 2, s, hi,
                              epsabs=1e-10, epsrel=1e-12, limit=200)
    return below + above
