"""Small dense SPD utilities and the Gaussian product factorization.

Every matrix inverse needed by the learner and the forecaster goes through a
Cholesky factorization here; no explicit inverses are formed.

Functions
---------
pd_factor
solve_spd
spd_cho_factor
symmetrize
fuse_gaussians
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NotPositiveDefiniteError

JITTER_SCALE = 1e-9


def symmetrize(M):
    """Return ``(M + M^T) / 2`` (works on stacks of matrices)."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def pd_factor(M):
    """Lower Cholesky factor of `M`, or ``None`` if `M` is not positive definite.

    Never raises on a non-PD input; the ``None`` return is the failure flag.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        return None
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return None


def jitter_amount(A):
    n = A.shape[0]
    return JITTER_SCALE * max(1.0, float(np.trace(A)) / n)


def spd_cho_factor(A, jitter=True, context=None):
    """Cholesky-factor an SPD matrix for reuse with :func:`scipy.linalg.cho_solve`.

    When the factorization fails and `jitter` is set, a single retry is made
    on ``A + delta*I`` with ``delta = 1e-9 * max(1, trace(A)/n)``.

    Parameters
    ----------
    A : ndarray, shape (n, n)
        Symmetric matrix.
    jitter : bool
        Whether to retry once with a diagonal jitter.
    context : str, optional
        Appended to the error message on failure.

    Returns
    -------
    factor : tuple
        ``(c, lower)`` as returned by :func:`scipy.linalg.cho_factor`.
    jittered : bool
        True when the retry was needed.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefiniteError(_msg("matrix has non-finite entries", context))
    try:
        return cho_factor(A, lower=True, check_finite=False), False
    except np.linalg.LinAlgError:
        if not jitter:
            raise NotPositiveDefiniteError(_msg("matrix is not positive definite", context))
    delta = jitter_amount(A)
    try:
        return cho_factor(A + delta * np.eye(A.shape[0]), lower=True, check_finite=False), True
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            _msg(f"matrix is not positive definite even after jitter {delta:.3g}", context)
        ) from None


def solve_spd(A, B, jitter=True, context=None):
    """Solve ``A X = B`` for symmetric positive definite `A`."""
    factor, _ = spd_cho_factor(A, jitter=jitter, context=context)
    return cho_solve(factor, np.asarray(B, dtype=float), check_finite=False)


def _msg(text, context):
    return f"{text} ({context})" if context else text


@dataclass(frozen=True)
class GaussianDensity:
    """Multivariate normal density ``N(x; mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size

    def logpdf(self, x):
        """Log density at `x`; `x` may be a single point or a stack ``(m, dim)``."""
        L = np.linalg.cholesky(self.cov)
        x = np.asarray(x, dtype=float)
        diff = (x - self.mean).reshape(-1, self.dim).T
        z = np.linalg.solve(L, diff)
        quad = np.sum(z * z, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out = -0.5 * (quad + logdet + self.dim * np.log(2.0 * np.pi))
        return out[0] if x.ndim == 1 else out

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def fuse_gaussians(a, B, C, D, y):
    """Factor the product ``N(x; a, B) N(y; C x, D)``.

    The product equals ``N(x; E e, E) N(y; C a, D + C B C^T)`` with
    ``E = (B^-1 + C^T D^-1 C)^-1`` and ``e = B^-1 a + C^T D^-1 y``.

    Parameters
    ----------
    a : ndarray, shape (n,)
        Prior mean.
    B : ndarray, shape (n, n)
        Prior covariance, positive definite.
    C : ndarray, shape (m, n)
        Observation matrix.
    D : ndarray, shape (m, m)
        Observation covariance, positive definite.
    y : ndarray, shape (m,)
        Observation.

    Returns
    -------
    posterior : GaussianDensity
        Density over `x` with mean ``E e`` and covariance ``E``.
    evidence : GaussianDensity
        Density over `y` with mean ``C a`` and covariance ``D + C B C^T``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, m = a.size, y.size
    if B.shape != (n, n) or D.shape != (m, m) or C.shape != (m, n):
        raise ValueError(
            f"inconsistent shapes: a {a.shape}, B {B.shape}, C {C.shape}, D {D.shape}, y {y.shape}"
        )
    B_fac, _ = spd_cho_factor(B, jitter=False, context="prior covariance")
    D_fac, _ = spd_cho_factor(D, jitter=False, context="observation covariance")

    Dinv_C = cho_solve(D_fac, C)
    precision = symmetrize(cho_solve(B_fac, np.eye(n)) + C.T @ Dinv_C)
    info = cho_solve(B_fac, a) + Dinv_C.T @ y

    P_fac, _ = spd_cho_factor(precision, jitter=False, context="posterior precision")
    E = symmetrize(cho_solve(P_fac, np.eye(n)))
    posterior = GaussianDensity(cho_solve(P_fac, info), E)
    evidence = GaussianDensity(C @ a, symmetrize(D + C @ B @ C.T))
    return posterior, evidence
