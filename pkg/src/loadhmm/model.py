"""Model parameters and learner state, one pair of conditional models per calendar type.

A :class:`ModelBank` holds, for each calendar type ``c``:

* the transition model ``s_t | s_{t-1} ~ N(M_s u_s, Sigma_s)`` with
  ``u_s = [1, s_{t-1}]`` (feature dimension ``K + 1``);
* the observation model ``s_t | r_t ~ N(M_r u_r, Sigma_r)`` with ``u_r`` the
  ``K * R`` feature vector built from the observations;

together with the recursion state ``P`` (inverse weighted feature Gram) and
``gamma`` (cumulative forgetting factor) of each.

Calendar types are 1-based (``1..C``) wherever they appear as values; the
stacked arrays are indexed with ``c - 1``.
"""
import json
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

import numpy as np

SNAPSHOT_FORMAT = "loadhmm-bank"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class CalendarModel:
    """Map timestamps to calendar types.

    With the default ``n_types=48``, weekday hours ``h`` map to ``h + 1`` and
    weekend or holiday hours map to ``h + 25``. ``n_types=24`` keeps only the
    hour, ``n_types=2`` only the day kind, ``n_types=1`` collapses everything.
    """

    holidays: frozenset = field(default_factory=frozenset)
    n_types: int = 48
    hours_per_day: int = 24
    weekend_offset: int = 24

    def __post_init__(self):
        if self.n_types not in (1, 2, 24, 48):
            raise ValueError(f"unsupported calendar size {self.n_types}; use 1, 2, 24 or 48")
        object.__setattr__(self, "holidays", frozenset(_as_date(d) for d in self.holidays))

    def is_off_day(self, ts):
        return ts.weekday() >= 5 or ts.date() in self.holidays

    def __call__(self, ts):
        return calendar_of(ts, self)

    def types(self, timestamps):
        return np.array([calendar_of(ts, self) for ts in timestamps], dtype=int)


def _as_date(d):
    if isinstance(d, datetime):
        return d.date()
    if isinstance(d, date):
        return d
    return date.fromisoformat(str(d).strip())


def calendar_of(ts, cal):
    """Calendar type in ``1..cal.n_types`` for timestamp `ts`."""
    off = cal.is_off_day(ts)
    if cal.n_types == 48:
        return ts.hour + 1 + (cal.weekend_offset if off else 0)
    if cal.n_types == 24:
        return ts.hour + 1
    if cal.n_types == 2:
        return 2 if off else 1
    return 1


@dataclass
class ConditionalModel:
    """One Gaussian conditional ``N(s; M u, Sigma)`` plus its recursion state."""

    M: np.ndarray
    Sigma: np.ndarray
    P: np.ndarray
    gamma: float

    @property
    def n_entities(self):
        return self.M.shape[0]

    @property
    def n_features(self):
        return self.M.shape[1]

    def copy(self):
        return ConditionalModel(self.M.copy(), self.Sigma.copy(), self.P.copy(), float(self.gamma))


def _symmetric(X):
    if X.ndim == 3 and not np.array_equal(X, np.swapaxes(X, 1, 2)):
        return 0.5 * (X + np.swapaxes(X, 1, 2))
    return X


class ModelStack:
    """``C`` conditional models of equal shape stored as stacked arrays.

    Behaves like a sequence of :class:`ConditionalModel` indexed ``0..C-1``;
    items returned by indexing are copies.
    """

    def __init__(self, M, Sigma, P, gamma):
        self.M = np.asarray(M, dtype=float)
        # the learner preserves exact symmetry, so it is established once here
        self.Sigma = _symmetric(np.asarray(Sigma, dtype=float))
        self.P = _symmetric(np.asarray(P, dtype=float))
        self.gamma = np.asarray(gamma, dtype=float)
        C, K, d = self.M.shape
        if self.Sigma.shape != (C, K, K) or self.P.shape != (C, d, d) or self.gamma.shape != (C,):
            raise ValueError("inconsistent model stack shapes")

    @classmethod
    def initial(cls, C, K, d):
        return cls(np.zeros((C, K, d)), np.zeros((C, K, K)), np.tile(np.eye(d), (C, 1, 1)), np.zeros(C))

    def __len__(self):
        return self.M.shape[0]

    def __getitem__(self, i):
        return ConditionalModel(self.M[i].copy(), self.Sigma[i].copy(), self.P[i].copy(), float(self.gamma[i]))

    def __setitem__(self, i, model):
        self.M[i] = model.M
        self.Sigma[i] = model.Sigma
        self.P[i] = model.P
        self.gamma[i] = model.gamma

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def n_entities(self):
        return self.M.shape[1]

    @property
    def n_features(self):
        return self.M.shape[2]

    def copy(self):
        return ModelStack(self.M.copy(), self.Sigma.copy(), self.P.copy(), self.gamma.copy())

    def equals(self, other):
        return all(
            np.array_equal(a, b)
            for a, b in zip(
                (self.M, self.Sigma, self.P, self.gamma),
                (other.M, other.Sigma, other.P, other.gamma),
            )
        )


@dataclass
class ModelBank:
    """Parameters and recursion state for all calendar types."""

    K: int
    R: int
    C: int
    transition: ModelStack
    observation: ModelStack
    lambda_s: float = 0.9
    lambda_r: float = 0.9

    def __post_init__(self):
        if len(self.transition) != self.C or len(self.observation) != self.C:
            raise ValueError("model stacks must have C entries")
        if self.transition.n_entities != self.K or self.transition.n_features != self.K + 1:
            raise ValueError("transition models must be K x (K+1)")
        if self.observation.n_entities != self.K or self.observation.n_features != self.K * self.R:
            raise ValueError("observation models must be K x (K*R)")
        for lam in (self.lambda_s, self.lambda_r):
            if not 0.0 < lam < 1.0:
                raise ValueError(f"forgetting factor must lie in (0, 1), got {lam}")

    def copy(self):
        return ModelBank(
            self.K, self.R, self.C, self.transition.copy(), self.observation.copy(),
            self.lambda_s, self.lambda_r,
        )

    def equals(self, other):
        return (
            (self.K, self.R, self.C, self.lambda_s, self.lambda_r)
            == (other.K, other.R, other.C, other.lambda_s, other.lambda_r)
            and self.transition.equals(other.transition)
            and self.observation.equals(other.observation)
        )

    def select_entities(self, idx):
        """Sub-bank restricted to entity indices `idx` (0-based).

        Only meaningful for a fresh (initial) bank or for synthetic truths;
        learned cross-entity coefficients of dropped entities are discarded.
        """
        idx = np.asarray(idx, dtype=int)
        t_cols = np.concatenate([[0], idx + 1])
        r_cols = (idx[:, None] * self.R + np.arange(self.R)).ravel()
        tr, ob = self.transition, self.observation
        return ModelBank(
            len(idx), self.R, self.C,
            ModelStack(tr.M[:, idx][:, :, t_cols], tr.Sigma[:, idx][:, :, idx],
                       tr.P[:, t_cols][:, :, t_cols], tr.gamma.copy()),
            ModelStack(ob.M[:, idx][:, :, r_cols], ob.Sigma[:, idx][:, :, idx],
                       ob.P[:, r_cols][:, :, r_cols], ob.gamma.copy()),
            self.lambda_s, self.lambda_r,
        )


def init_model(K, R, C=48, lambda_s=0.9, lambda_r=0.9):
    """Fresh bank with ``M = 0``, ``Sigma = 0``, ``P = I`` and ``gamma = 0`` everywhere."""
    for name, v in (("K", K), ("R", R), ("C", C)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    K, R, C = int(K), int(R), int(C)
    return ModelBank(
        K, R, C,
        ModelStack.initial(C, K, K + 1),
        ModelStack.initial(C, K, K * R),
        lambda_s, lambda_r,
    )


def _stack_to_json(stack):
    return [
        {
            "M": stack.M[c].ravel().tolist(),
            "Sigma": stack.Sigma[c].ravel().tolist(),
            "P": stack.P[c].ravel().tolist(),
            "gamma": float(stack.gamma[c]),
        }
        for c in range(len(stack))
    ]


def _stack_from_json(items, K, d):
    return ModelStack(
        np.array([it["M"] for it in items], dtype=float).reshape(-1, K, d),
        np.array([it["Sigma"] for it in items], dtype=float).reshape(-1, K, K),
        np.array([it["P"] for it in items], dtype=float).reshape(-1, d, d),
        np.array([it["gamma"] for it in items], dtype=float),
    )


def bank_to_dict(bank):
    return {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "K": bank.K,
        "R": bank.R,
        "C": bank.C,
        "lambda_s": bank.lambda_s,
        "lambda_r": bank.lambda_r,
        "layout": "row-major",
        "transition": _stack_to_json(bank.transition),
        "observation": _stack_to_json(bank.observation),
    }


def bank_from_dict(doc):
    if doc.get("format") != SNAPSHOT_FORMAT:
        raise ValueError("not a model bank snapshot")
    if doc.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {doc.get('version')}")
    K, R, C = int(doc["K"]), int(doc["R"]), int(doc["C"])
    return ModelBank(
        K, R, C,
        _stack_from_json(doc["transition"], K, K + 1),
        _stack_from_json(doc["observation"], K, K * R),
        float(doc["lambda_s"]), float(doc["lambda_r"]),
    )


def save_bank(bank, path):
    """Write a snapshot; ``.npz`` selects the binary format, anything else JSON."""
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(
            path,
            header=np.array(json.dumps({
                "format": SNAPSHOT_FORMAT, "version": SNAPSHOT_VERSION,
                "K": bank.K, "R": bank.R, "C": bank.C,
            })),
            lambdas=np.array([bank.lambda_s, bank.lambda_r]),
            **{f"{kind}_{name}": getattr(getattr(bank, kind), name)
               for kind in ("transition", "observation")
               for name in ("M", "Sigma", "P", "gamma")},
        )
    else:
        path.write_text(json.dumps(bank_to_dict(bank)))
    return path


def load_bank(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != SNAPSHOT_FORMAT or header.get("version") != SNAPSHOT_VERSION:
                raise ValueError("not a supported model bank snapshot")
            stacks = {
                kind: ModelStack(*(z[f"{kind}_{name}"] for name in ("M", "Sigma", "P", "gamma")))
                for kind in ("transition", "observation")
            }
            lam_s, lam_r = (float(v) for v in z["lambdas"])
        return ModelBank(header["K"], header["R"], header["C"],
                         stacks["transition"], stacks["observation"], lam_s, lam_r)
    return bank_from_dict(json.loads(path.read_text()))
