"""Recursive multi-step Gaussian forecasts with full cross-entity covariance.

Each step fuses the transition prediction ``M_s [1, s_prev]`` (covariance
``W1 = Sigma_s + A E_prev A^T`` where ``A`` drops the intercept column of
``M_s``) with the observation-based prediction ``M_r u_r`` (covariance
``W2 = Sigma_r``)::

    mean = W1 (W1 + W2)^-1 M_r u_r + W2 (W1 + W2)^-1 M_s [1, s_prev]
    cov  = W2 (W1 + W2)^-1 W1

starting from the observed load with zero covariance.
"""
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import cho_solve
from scipy.stats import norm

from .errors import NotPositiveDefiniteError, NumericalError
from .gaussian import spd_cho_factor, symmetrize
from .sparsify import threshold_covariance


def selector(K):
    """The ``(K+1, K)`` matrix ``[0; I_K]``; ``M_s @ selector(K)`` drops the intercept column."""
    return np.vstack([np.zeros((1, K)), np.eye(K)])


@dataclass(frozen=True)
class ProbabilisticForecast:
    """Per-step Gaussians ``N(means[i], covs[i])`` for steps ``1..L`` after `base_time`.

    `conditioned_on` is the time of the last observed load the forecast
    conditions on; it precedes `base_time` when the load feed is delayed.
    """

    base_time: Optional[datetime]
    means: np.ndarray
    covs: np.ndarray
    conditioned_on: Optional[datetime] = None

    @property
    def horizon(self):
        return self.means.shape[0]

    @property
    def n_entities(self):
        return self.means.shape[1]

    @property
    def variances(self):
        return np.diagonal(self.covs, axis1=1, axis2=2).copy()

    @property
    def stds(self):
        return np.sqrt(np.clip(self.variances, 0.0, None))

    def timestamps(self):
        return [self.base_time + timedelta(hours=i) for i in range(1, self.horizon + 1)]

    def drop_leading(self, n):
        """Forecast for steps ``n+1..L`` only, with the base time moved forward by `n` hours."""
        if n == 0:
            return self
        base = self.base_time + timedelta(hours=n) if self.base_time is not None else None
        return replace(
            self, base_time=base, means=self.means[n:], covs=self.covs[n:],
            conditioned_on=self.conditioned_on if self.conditioned_on is not None else self.base_time,
        )


def predict_one(bank, c, prev_mean, prev_cov, u_r, policy=None):
    """One recursion step for calendar type `c` (1-based).

    Parameters
    ----------
    bank : ModelBank
    c : int
        Calendar type of the predicted time.
    prev_mean : ndarray, shape (K,)
    prev_cov : ndarray, shape (K, K)
        Covariance of the previous step; zero at the first step.
    u_r : ndarray, shape (K * R,)
        Observation features at the predicted time.
    policy : SparsifyPolicy, optional
        When given, both covariances are thresholded (on copies) first.

    Returns
    -------
    mean : ndarray, shape (K,)
    cov : ndarray, shape (K, K)

    Raises
    ------
    NumericalError
        If ``W1 + W2`` is not positive definite even after jitter.
    """
    if not 1 <= c <= bank.C:
        raise ValueError(f"calendar type {c} outside 1..{bank.C}")
    i = c - 1
    M_s = bank.transition.M[i]
    M_r = bank.observation.M[i]
    Sigma_s = bank.transition.Sigma[i]
    Sigma_r = bank.observation.Sigma[i]
    if policy is not None and policy.enabled:
        Sigma_s = threshold_covariance(Sigma_s, policy)
        Sigma_r = threshold_covariance(Sigma_r, policy)

    A = M_s[:, 1:]
    W1 = Sigma_s + A @ prev_cov @ A.T
    W2 = Sigma_r
    try:
        factor, _ = spd_cho_factor(symmetrize(W1 + W2), context=f"calendar type {c}")
    except NotPositiveDefiniteError as exc:
        raise NumericalError(f"fusion failed: {exc}") from None
    # W2 (W1+W2)^-1; the complementary weight is I minus this, which keeps the
    # all-zero-covariance limit at the observation-based prediction.
    G2 = cho_solve(factor, W2, check_finite=False).T
    from_trans = M_s[:, 0] + A @ prev_mean
    from_obs = M_r @ u_r
    mean = from_obs + G2 @ (from_trans - from_obs)
    cov = symmetrize(G2 @ W1)
    return mean, cov


def fusion_weights(W1, W2):
    """The two fusion weights ``W1 (W1+W2)^-1`` and ``W2 (W1+W2)^-1``, each by its own solve."""
    factor, _ = spd_cho_factor(symmetrize(W1 + W2))
    return cho_solve(factor, W1).T, cho_solve(factor, W2).T


def forecast_path(bank, s_t, features, types, policy=None):
    """Run :func:`predict_one` over explicit calendar types; returns ``(means, covs)``."""
    s_t = np.asarray(s_t, dtype=float)
    features = np.atleast_2d(np.asarray(features, dtype=float))
    types = np.asarray(types, dtype=int)
    L = len(types)
    if features.shape != (L, bank.K * bank.R):
        raise ValueError(f"features must have shape {(L, bank.K * bank.R)}, got {features.shape}")
    if s_t.shape != (bank.K,):
        raise ValueError(f"s_t must have shape {(bank.K,)}")
    means = np.empty((L, bank.K))
    covs = np.empty((L, bank.K, bank.K))
    mean, cov = s_t, np.zeros((bank.K, bank.K))
    for i in range(L):
        mean, cov = predict_one(bank, int(types[i]), mean, cov, features[i], policy)
        means[i], covs[i] = mean, cov
    return means, covs


def prediction_step(bank, s_t, features, t, cal, policy=None, types=None):
    """Probabilistic forecast for the hours ``t+1 .. t+L``.

    `features` holds one ``u_r`` vector per step. The bank is only read.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    L = features.shape[0]
    if types is None:
        types = [cal(t + timedelta(hours=i)) for i in range(1, L + 1)]
    means, covs = forecast_path(bank, s_t, features, types, policy)
    return ProbabilisticForecast(t, means, covs, conditioned_on=t)


class QuantileValue(NamedTuple):
    value: float
    degenerate: bool


def forecast_quantile(f, step, entity, q):
    """Quantile `q` of the marginal forecast of `entity` at `step` (both 1-based).

    A zero variance yields the mean, flagged as degenerate unless ``q == 0.5``.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    if not (1 <= step <= f.horizon and 1 <= entity <= f.n_entities):
        raise IndexError("step or entity out of range")
    mu = float(f.means[step - 1, entity - 1])
    var = float(f.covs[step - 1, entity - 1, entity - 1])
    if var <= 0.0:
        return QuantileValue(mu, q != 0.5)
    return QuantileValue(mu + float(norm.ppf(q)) * np.sqrt(var), False)


def aggregate_forecast(f, step):
    """Mean and variance of the sum over entities at `step` (1-based), cross-covariances included."""
    if not 1 <= step <= f.horizon:
        raise IndexError("step out of range")
    return float(f.means[step - 1].sum()), float(f.covs[step - 1].sum())


def aggregate_series(f):
    """Aggregate means and variances for all steps at once."""
    return f.means.sum(axis=1), f.covs.sum(axis=(1, 2))
