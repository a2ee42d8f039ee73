"""Exponentially weighted recursive ML updates of the conditional models.

For a model ``N(s; M u, Sigma)`` with forgetting factor ``lam`` a new pair
``(u, s)`` is absorbed by::

    e     = s - M u
    P'    = (P - P u u^T P / (lam + u^T P u)) / lam
    gamma'= lam * gamma + 1
    Sigma'= Sigma - (Sigma - lam^2 e e^T / (lam + u^T P u)^2) / gamma'
    M'    = M + e u^T P / (lam + u^T P u)

where ``P`` on the right-hand sides is the pre-update matrix. Passing
``order="post-update"`` instead reuses the freshly updated ``P'`` in the
covariance and mean corrections, for implementations that refresh ``P`` first.
"""
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .model import ConditionalModel

ORDERS = ("pre-update", "post-update")


def _check_lambda(lam):
    if not (np.isfinite(lam) and 0.0 < lam < 1.0):
        raise ValueError(f"forgetting factor must lie in (0, 1), got {lam}")


def _check_order(order):
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}, got {order!r}")


def recursive_update(model, u, s, lam, order="pre-update"):
    """Absorb one observation pair into `model` and return the updated copy.

    Parameters
    ----------
    model : ConditionalModel
        Current parameters; not modified.
    u : ndarray, shape (d,)
        Feature vector.
    s : ndarray, shape (K,)
        Observed load vector.
    lam : float
        Forgetting factor in (0, 1).
    order : {"pre-update", "post-update"}
        Which ``P`` feeds the covariance and mean corrections (see module doc).

    Returns
    -------
    ConditionalModel
    """
    _check_lambda(lam)
    _check_order(order)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if u.shape != (model.n_features,) or s.shape != (model.n_entities,):
        raise ValueError(
            f"expected u of size {model.n_features} and s of size {model.n_entities}, "
            f"got {u.shape} and {s.shape}"
        )
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(s))):
        raise ValueError("non-finite feature or load values")
    M, Sigma, P, gamma = _update_arrays(
        model.M[None], model.Sigma[None], model.P[None], np.array([model.gamma]),
        u[None], s[None], lam, order,
    )
    return ConditionalModel(M[0], Sigma[0], P[0], float(gamma[0]))


def _update_arrays(M, Sigma, P, gamma, U, Y, lam, order):
    """Vectorized update of ``b`` independent models; shapes carry a leading batch axis.

    Every outer product is formed as ``x_i * x_j`` before any scaling, so
    exactly symmetric ``P`` and ``Sigma`` stay exactly symmetric.
    """
    Pu = np.matmul(P, U[:, :, None])[:, :, 0]
    den = lam + np.einsum("bi,bi->b", U, Pu)
    e = Y - np.matmul(M, U[:, :, None])[:, :, 0]
    P_new = Pu[:, :, None] * Pu[:, None, :]
    P_new /= den[:, None, None]
    np.subtract(P, P_new, out=P_new)
    P_new /= lam
    gamma_new = lam * gamma + 1.0
    if order == "post-update":
        Pu = np.matmul(P_new, U[:, :, None])[:, :, 0]
        den = lam + np.einsum("bi,bi->b", U, Pu)
    # Sigma' = (1 - 1/gamma') Sigma + (lam/den)^2 e e^T / gamma'
    Sigma_new = e[:, :, None] * e[:, None, :]
    Sigma_new *= ((lam / den) ** 2 / gamma_new)[:, None, None]
    Sigma_new += Sigma * (1.0 - 1.0 / gamma_new)[:, None, None]
    M_new = M + e[:, :, None] * (Pu / den[:, None])[:, None, :]
    return M_new, Sigma_new, P_new, gamma_new


def update_stack(stack, idx, U, Y, lam, order="pre-update"):
    """Apply updates ``(U[j], Y[j])`` to models ``stack[idx[j]]`` in sequence order, in place.

    Updates hitting distinct models are independent and run as one batch;
    repeated indices are processed in rounds so each model sees its updates
    in the original order.
    """
    _check_lambda(lam)
    _check_order(order)
    idx = np.asarray(idx, dtype=int)
    U = np.asarray(U, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if idx.size == 0:
        return stack
    if len(set(idx.tolist())) == idx.size:
        stack.M[idx], stack.Sigma[idx], stack.P[idx], stack.gamma[idx] = _update_arrays(
            stack.M[idx], stack.Sigma[idx], stack.P[idx], stack.gamma[idx], U, Y, lam, order,
        )
        return stack
    remaining = np.arange(idx.size)
    while remaining.size:
        _, first = np.unique(idx[remaining], return_index=True)
        take = remaining[np.sort(first)]
        sel = idx[take]
        M, Sigma, P, gamma = _update_arrays(
            stack.M[sel], stack.Sigma[sel], stack.P[sel], stack.gamma[sel],
            U[take], Y[take], lam, order,
        )
        stack.M[sel], stack.Sigma[sel], stack.P[sel], stack.gamma[sel] = M, Sigma, P, gamma
        remaining = np.setdiff1d(remaining, take, assume_unique=True)
    return stack


@dataclass
class TrainingSlice:
    """Loads ``s_t .. s_{t+L}`` and observation features for ``t+1 .. t+L``.

    Attributes
    ----------
    t : datetime
        Base time (the time of ``loads[0]``); steps are hourly.
    loads : ndarray, shape (L + 1, K)
    features : ndarray, shape (L, K * R)
    """

    t: datetime
    loads: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        self.loads = np.atleast_2d(np.asarray(self.loads, dtype=float))
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.features.shape[0] != self.loads.shape[0] - 1:
            raise ValueError("a slice needs one more load vector than feature vectors")

    @property
    def horizon(self):
        return self.features.shape[0]

    def timestamps(self):
        return [self.t + timedelta(hours=i) for i in range(1, self.horizon + 1)]


def learning_step(bank, slc, cal, L=None, order="pre-update", types=None):
    """Update `bank` in place with every step of `slc` and return it.

    For ``i = 1..L`` the calendar type ``c = c(t+i)`` is looked up, then the
    transition model ``c`` absorbs ``([1, s_{t+i-1}], s_{t+i})`` and the
    observation model ``c`` absorbs ``(u_r(r_{t+i}), s_{t+i})``. A step whose
    loads or features are not finite is skipped for both models.

    Parameters
    ----------
    bank : ModelBank
    slc : TrainingSlice
    cal : CalendarModel
        Used to derive calendar types unless `types` is given.
    L : int, optional
        Number of steps to use; defaults to the slice horizon.
    order : {"pre-update", "post-update"}
    types : sequence of int, optional
        Explicit 1-based calendar types for steps ``1..L``.
    """
    L = slc.horizon if L is None else int(L)
    if L < 0 or L > slc.horizon:
        raise ValueError(f"L={L} outside slice horizon {slc.horizon}")
    if L == 0:
        return bank
    K = bank.K
    if slc.loads.shape[1] != K or slc.features.shape[1] != K * bank.R:
        raise ValueError(
            f"slice dims (K={slc.loads.shape[1]}, KR={slc.features.shape[1]}) do not match "
            f"bank dims (K={K}, KR={K * bank.R})"
        )
    if types is None:
        types = [cal(ts) for ts in slc.timestamps()[:L]]
    types = np.asarray(types, dtype=int)[:L]
    if types.min() < 1 or types.max() > bank.C:
        raise ValueError(f"calendar types must lie in 1..{bank.C}")

    prev = slc.loads[:L]
    cur = slc.loads[1:L + 1]
    feats = slc.features[:L]
    ok = (np.all(np.isfinite(prev), axis=1) & np.all(np.isfinite(cur), axis=1)
          & np.all(np.isfinite(feats), axis=1))
    if not ok.all():
        if not ok.any():
            return bank
        prev, cur, feats, types = prev[ok], cur[ok], feats[ok], types[ok]
    idx = types - 1
    U_s = np.empty((len(idx), K + 1))
    U_s[:, 0] = 1.0
    U_s[:, 1:] = prev
    update_stack(bank.transition, idx, U_s, cur, bank.lambda_s, order)
    update_stack(bank.observation, idx, feats, cur, bank.lambda_r, order)
    return bank
