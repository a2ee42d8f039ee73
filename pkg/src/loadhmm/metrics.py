"""Point and probabilistic scores for load forecasts.

All functions broadcast over numpy arrays. Gaussian predictive
distributions are scored with the closed-form CRPS.
"""
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

#: Quantile levels used for pinball loss and calibration (0.05, 0.10, ..., 0.95).
QUANTILES = np.round(np.arange(1, 20) * 0.05, 2)

_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


def abs_error(s, s_hat):
    return np.abs(np.asarray(s, dtype=float) - np.asarray(s_hat, dtype=float))


def rmse(errors):
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("rmse of an empty sample")
    return float(np.sqrt(np.mean(errors ** 2)))


class MapeResult(NamedTuple):
    value: float
    n_excluded: int


def mape(actuals, forecasts):
    """Mean absolute percentage error in percent.

    Samples with a zero actual are left out and counted in ``n_excluded``.
    """
    actuals = np.asarray(actuals, dtype=float).ravel()
    forecasts = np.asarray(forecasts, dtype=float).ravel()
    keep = actuals != 0.0
    if not keep.any():
        return MapeResult(float("nan"), int(actuals.size))
    ape = np.abs(actuals[keep] - forecasts[keep]) / np.abs(actuals[keep])
    return MapeResult(float(100.0 * ape.mean()), int((~keep).sum()))


def crps_gaussian(mu, sigma, s):
    """CRPS of ``N(mu, sigma^2)`` for observation `s`; equals ``|s - mu|`` when ``sigma == 0``."""
    mu, sigma, s = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mu, sigma, s)))
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    out = np.array(np.abs(s - mu))
    pos = sigma > 0
    if np.any(pos):
        z = (s[pos] - mu[pos]) / sigma[pos]
        out[pos] = sigma[pos] * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - _INV_SQRT_PI)
    return out if out.ndim else float(out)


def pinball(s, s_q, q):
    """Pinball loss of quantile forecast `s_q` at level `q`."""
    s, s_q, q = (np.asarray(v, dtype=float) for v in (s, s_q, q))
    diff = s - s_q
    out = np.where(diff >= 0.0, q * diff, (q - 1.0) * diff)
    return out if out.ndim else float(out)


class Calibration(NamedTuple):
    quantiles: np.ndarray
    curve: np.ndarray
    ce: float


def calibration(hits, n, quantiles=QUANTILES):
    """Calibration curve ``C(q) = hits/n`` and its mean absolute error against ``q``."""
    if n <= 0:
        raise ValueError("calibration needs at least one sample")
    quantiles = np.asarray(quantiles, dtype=float)
    curve = np.asarray(hits, dtype=float) / n
    return Calibration(quantiles, curve, float(np.mean(np.abs(curve - quantiles))))


def gaussian_quantiles(mu, sigma, quantiles=QUANTILES):
    """Quantile forecasts with a trailing quantile axis."""
    mu = np.asarray(mu, dtype=float)[..., None]
    sigma = np.asarray(sigma, dtype=float)[..., None]
    return mu + sigma * norm.ppf(np.asarray(quantiles, dtype=float))


class ScoreAccumulator:
    """Running sums of all scores for a set of labelled columns.

    Columns are typically the K entities followed by an ``"aggregate"``
    column. Non-finite actuals are ignored sample by sample.
    """

    _SUMS = ("n", "sq", "abs", "ape", "ape_n", "ape_excluded", "crps", "cover2")

    def __init__(self, labels, quantiles=QUANTILES):
        self.labels = list(labels)
        self.quantiles = np.asarray(quantiles, dtype=float)
        m, nq = len(self.labels), self.quantiles.size
        self.sums = {k: np.zeros(m) for k in self._SUMS}
        self.pinball = np.zeros((m, nq))
        self.hits = np.zeros((m, nq))

    def add(self, actual, mean, std):
        """Add samples; all arguments have shape ``(n, len(labels))``."""
        actual, mean, std = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (actual, mean, std))
        valid = np.isfinite(actual)
        a = np.where(valid, actual, 0.0)
        mu = np.where(valid, mean, 0.0)
        sd = np.where(valid, std, 0.0)
        err = a - mu
        w = valid.astype(float)
        s = self.sums
        s["n"] += w.sum(axis=0)
        s["sq"] += (w * err ** 2).sum(axis=0)
        s["abs"] += (w * np.abs(err)).sum(axis=0)
        nz = valid & (a != 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            s["ape"] += np.where(nz, np.abs(err) / np.abs(np.where(nz, a, 1.0)), 0.0).sum(axis=0)
        s["ape_n"] += nz.sum(axis=0)
        s["ape_excluded"] += (valid & (a == 0.0)).sum(axis=0)
        s["crps"] += (w * crps_gaussian(mu, sd, a)).sum(axis=0)
        s["cover2"] += (w * (np.abs(err) <= 2.0 * sd)).sum(axis=0)
        qf = gaussian_quantiles(mu, sd, self.quantiles)
        self.pinball += (w[..., None] * pinball(a[..., None], qf, self.quantiles)).sum(axis=0)
        self.hits += (w[..., None] * (a[..., None] < qf)).sum(axis=0)

    def merge(self, other):
        if other.labels != self.labels or not np.array_equal(other.quantiles, self.quantiles):
            raise ValueError("cannot merge accumulators with different layouts")
        for k in self._SUMS:
            self.sums[k] += other.sums[k]
        self.pinball += other.pinball
        self.hits += other.hits
        return self

    def calibration(self, j):
        return calibration(self.hits[j], self.sums["n"][j], self.quantiles)

    def rows(self):
        """One dict per column with the final scores."""
        out = []
        for j, label in enumerate(self.labels):
            n = self.sums["n"][j]
            row = {"entity": label, "n": int(n)}
            if n == 0:
                row.update(rmse=np.nan, mae=np.nan, mape=np.nan, mape_excluded=0,
                           crps=np.nan, pinball=np.nan, ce=np.nan, coverage_2sd=np.nan)
            else:
                ape_n = self.sums["ape_n"][j]
                row.update(
                    rmse=float(np.sqrt(self.sums["sq"][j] / n)),
                    mae=float(self.sums["abs"][j] / n),
                    mape=float(100.0 * self.sums["ape"][j] / ape_n) if ape_n else np.nan,
                    mape_excluded=int(self.sums["ape_excluded"][j]),
                    crps=float(self.sums["crps"][j] / n),
                    pinball=float(self.pinball[j].mean() / n),
                    ce=self.calibration(j).ce,
                    coverage_2sd=float(self.sums["cover2"][j] / n),
                )
            out.append(row)
        return out
