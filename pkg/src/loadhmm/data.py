"""Load/weather ingestion, observation features and synthetic HMM data.

CSV layout: a ``timestamp`` column (ISO-8601, hourly), one ``load_<name>``
column per entity and either one ``temp_<name>`` column or several
``temp_<name>_<j>`` columns per entity. Empty load or weather cells are read
as missing (NaN).
"""
import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DataError
from .model import CalendarModel

HOUR = timedelta(hours=1)


class SeriesRecord(NamedTuple):
    timestamp: datetime
    loads: np.ndarray
    weather: np.ndarray


class Gap(NamedTuple):
    after: datetime
    before: datetime
    missing_hours: int


@dataclass
class CsvSchema:
    timestamp_col: str = "timestamp"
    load_prefix: str = "load_"
    weather_prefix: str = "temp_"


@dataclass
class LoadSeries:
    """Hourly loads ``(T, K)`` and weather ``(T, K, W)`` with entity names.

    Indexing yields :class:`SeriesRecord` items, so the object can be used
    wherever a sequence of records is expected.
    """

    timestamps: list
    loads: np.ndarray
    weather: np.ndarray
    entities: list
    gaps: list = field(default_factory=list)

    def __post_init__(self):
        self.loads = np.asarray(self.loads, dtype=float)
        self.weather = np.asarray(self.weather, dtype=float)
        T = len(self.timestamps)
        if self.loads.shape != (T, len(self.entities)) or self.weather.shape[:2] != self.loads.shape:
            raise DataError("inconsistent series shapes")

    def __len__(self):
        return len(self.timestamps)

    def __getitem__(self, i):
        return SeriesRecord(self.timestamps[i], self.loads[i], self.weather[i])

    @property
    def n_entities(self):
        return self.loads.shape[1]

    @property
    def n_weather(self):
        return self.weather.shape[2]

    def select(self, idx):
        """Series restricted to entity indices `idx` (0-based)."""
        idx = list(idx)
        return LoadSeries(list(self.timestamps), self.loads[:, idx], self.weather[:, idx],
                          [self.entities[i] for i in idx], list(self.gaps))

    def to_hourly(self):
        """Copy on a gap-free hourly grid; inserted hours carry NaN loads and weather."""
        if not self.gaps:
            return LoadSeries(list(self.timestamps), self.loads.copy(), self.weather.copy(),
                              list(self.entities), [])
        t0, t1 = self.timestamps[0], self.timestamps[-1]
        T = int((t1 - t0) / HOUR) + 1
        pos = np.array([int((ts - t0) / HOUR) for ts in self.timestamps])
        loads = np.full((T, self.n_entities), np.nan)
        weather = np.full((T, self.n_entities, self.n_weather), np.nan)
        loads[pos] = self.loads
        weather[pos] = self.weather
        return LoadSeries([t0 + i * HOUR for i in range(T)], loads, weather,
                          list(self.entities), list(self.gaps))


def _parse_float(text, lineno, col):
    text = text.strip()
    if text == "" or text.lower() == "nan":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise DataError(f"line {lineno}: column {col!r}: cannot parse {text!r} as a number") from None


def _weather_columns(header, name, prefix):
    single = f"{prefix}{name}"
    if single in header:
        return [single]
    multi = [h for h in header if h.startswith(f"{prefix}{name}_")]
    return sorted(multi, key=lambda h: int(h.rsplit("_", 1)[1]) if h.rsplit("_", 1)[1].isdigit() else h)


def load_csv(path, schema=CsvSchema()):
    """Read and validate an hourly load file.

    Raises
    ------
    DataError
        On a missing column, a malformed row (with its line number), a
        duplicated or non-increasing timestamp, or a sub-hourly step.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1)
                if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty file")
    _, header = rows[0]
    header = [h.strip() for h in header]
    if schema.timestamp_col not in header:
        raise DataError(f"{path}: missing {schema.timestamp_col!r} column")
    load_cols = [h for h in header if h.startswith(schema.load_prefix)]
    if not load_cols:
        raise DataError(f"{path}: no {schema.load_prefix}* columns")
    entities = [h[len(schema.load_prefix):] for h in load_cols]
    weather_cols = [_weather_columns(header, e, schema.weather_prefix) for e in entities]
    W = {len(w) for w in weather_cols}
    if len(W) != 1 or 0 in W:
        raise DataError(f"{path}: every entity needs the same number (>= 1) of weather columns")
    pos = {h: j for j, h in enumerate(header)}
    t_pos = pos[schema.timestamp_col]
    l_pos = [pos[h] for h in load_cols]
    w_pos = [[pos[h] for h in ws] for ws in weather_cols]

    timestamps, loads, weather, gaps = [], [], [], []
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            ts = datetime.fromisoformat(row[t_pos].strip())
        except ValueError:
            raise DataError(f"line {lineno}: bad timestamp {row[t_pos]!r}") from None
        if timestamps:
            step = ts - timestamps[-1]
            if step <= timedelta(0):
                raise DataError(f"line {lineno}: timestamp {ts} is not after {timestamps[-1]}")
            if step % HOUR:
                raise DataError(f"line {lineno}: timestamp {ts} is off the hourly grid")
            if step > HOUR:
                gaps.append(Gap(timestamps[-1], ts, int(step / HOUR) - 1))
        timestamps.append(ts)
        loads.append([_parse_float(row[j], lineno, header[j]) for j in l_pos])
        weather.append([[_parse_float(row[j], lineno, header[j]) for j in ws] for ws in w_pos])
    if not timestamps:
        raise DataError(f"{path}: no data rows")
    return LoadSeries(timestamps, np.array(loads), np.array(weather), entities, gaps)


def _fmt(x):
    return "" if not np.isfinite(x) else repr(float(x))


def write_csv(series, path, schema=CsvSchema()):
    """Write `series` in the layout read by :func:`load_csv` (exact float round-trip)."""
    W = series.n_weather
    header = [schema.timestamp_col] + [f"{schema.load_prefix}{e}" for e in series.entities]
    for e in series.entities:
        if W == 1:
            header.append(f"{schema.weather_prefix}{e}")
        else:
            header.extend(f"{schema.weather_prefix}{e}_{j + 1}" for j in range(W))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, ts in enumerate(series.timestamps):
            w.writerow([ts.isoformat()] + [_fmt(v) for v in series.loads[i]]
                       + [_fmt(v) for v in series.weather[i].ravel()])
    return Path(path)


FEATURE_KINDS = ("temperature-shift", "identity")


class FeatureMap:
    """Observation features ``u_r`` built per entity from raw weather.

    ``"temperature-shift"`` emits ``[1, dw, dw^2]`` per entity where ``dw`` is
    the first weather reading minus its running mean for the calendar type
    (``R = 3``); the running mean is then smoothed toward the reading with
    factor `smoothing`. ``"identity"`` passes the raw weather block through
    (``R = W``). Missing weather yields the zero-shift block (or zeros for the
    identity map) and is counted in :attr:`n_fallback`.
    """

    def __init__(self, kind, n_entities, n_types, n_weather=1, smoothing=0.95):
        if kind not in FEATURE_KINDS:
            raise ValueError(f"feature map must be one of {FEATURE_KINDS}, got {kind!r}")
        if not 0.0 < smoothing < 1.0:
            raise ValueError("smoothing factor must lie in (0, 1)")
        self.kind = kind
        self.n_entities = n_entities
        self.n_types = n_types
        self.n_weather = n_weather
        self.smoothing = smoothing
        self.means = np.zeros((n_types, n_entities))
        self.seen = np.zeros((n_types, n_entities), dtype=bool)
        self.n_fallback = 0

    @property
    def R(self):
        return 3 if self.kind == "temperature-shift" else self.n_weather


def build_features(record, fmap, c):
    """Feature vector ``u_r`` (length ``K * R``) for `record` at calendar type `c`.

    For the temperature-shift map the running mean of type `c` is updated
    after the features are formed, so the output only depends on earlier
    readings.
    """
    weather = np.asarray(record.weather, dtype=float).reshape(fmap.n_entities, -1)
    missing = ~np.all(np.isfinite(weather), axis=1)
    fmap.n_fallback += int(missing.sum())
    if fmap.kind == "identity":
        out = np.where(missing[:, None], 0.0, weather)
        return out.ravel()
    i = c - 1
    w = weather[:, 0]
    first = ~fmap.seen[i] & ~missing
    fmap.means[i, first] = w[first]
    fmap.seen[i, first] = True
    dw = np.where(missing, 0.0, w - fmap.means[i])
    upd = ~missing
    a = fmap.smoothing
    fmap.means[i, upd] = a * fmap.means[i, upd] + (1.0 - a) * w[upd]
    return np.column_stack([np.ones(fmap.n_entities), dw, dw * dw]).ravel()


def feature_matrix(series, fmap, cal):
    """Features for every timestamp of `series`, computed in time order; shape ``(T, K*R)``."""
    return np.array([build_features(series[i], fmap, cal(series.timestamps[i]))
                     for i in range(len(series))])


@dataclass
class DelayedSeries:
    """View of a series whose loads arrive `delay` hours late."""

    series: LoadSeries
    delay: int

    def latest_index(self, i):
        """Index of the most recent load available at index `i`."""
        return i - self.delay

    def latest_load(self, i):
        j = self.latest_index(i)
        if j < 0:
            raise IndexError("no load available yet")
        return self.series.timestamps[j], self.series.loads[j]


def apply_delay(series, d):
    """Wrap `series` so that at time ``t`` the newest load is ``s_{t-d}``; ``0 <= d <= 23``."""
    if int(d) != d or not 0 <= d <= 23:
        raise ValueError(f"delay must be an integer in 0..23, got {d!r}")
    return DelayedSeries(series, int(d))


# --- synthetic data ------------------------------------------------------------


def _equicorrelation(K, rho):
    return (1.0 - rho) * np.eye(K) + rho * np.ones((K, K))


def make_true_bank(K, R, C=48, seed=0, level=(5.0, 10.0), daily_amplitude=0.25,
                   weekend_factor=0.9, persistence=0.9, coupling=0.3, trans_sd=0.05,
                   trans_corr=0.5, obs_sd=0.1, obs_corr=0.2, lambda_s=0.9, lambda_r=0.9):
    """Random but well-conditioned generative parameters for :func:`synthesize_hmm`.

    Loads follow a daily profile around per-entity levels drawn from `level`;
    the transition matrix mixes each entity's own past with the cross-entity
    average (weight `coupling`), scaled by `persistence`. Noise standard
    deviations are relative to the entity level. P and gamma are left at
    their initial values.
    """
    from .model import init_model

    rng = np.random.default_rng(seed)
    bank = init_model(K, R, C, lambda_s, lambda_r)
    base = rng.uniform(*level, size=K)
    cal_hours = np.arange(C) % 24 if C >= 24 else np.zeros(C, dtype=int)
    off = (np.arange(C) >= 24) if C == 48 else np.zeros(C, dtype=bool)
    phase = rng.uniform(0, 2 * np.pi, size=K) * 0.2
    A = persistence * ((1.0 - coupling) * np.eye(K) + coupling * np.ones((K, K)) / K)

    def profile(h, is_off):
        shape = 1.0 + daily_amplitude * np.sin(2 * np.pi * (h - 9) / 24.0 + phase)
        return base * shape * (weekend_factor if is_off else 1.0)

    # elementwise products keep the covariances exactly symmetric
    scale = np.outer(base, base)
    Ss = trans_sd ** 2 * scale * _equicorrelation(K, trans_corr)
    Sr = obs_sd ** 2 * scale * _equicorrelation(K, obs_corr)
    for c in range(C):
        h, is_off = int(cal_hours[c]), bool(off[c])
        mu = profile(h, is_off)
        mu_prev = profile((h - 1) % 24, is_off)
        bank.transition.M[c] = np.column_stack([mu - A @ mu_prev, A])
        bank.transition.Sigma[c] = Ss
        Mr = np.zeros((K, K * R))
        for k in range(K):
            row = rng.normal(size=R)
            row[0] = abs(row[0]) + 1.0
            Mr[k, k * R:(k + 1) * R] = row / np.linalg.norm(row)
        bank.observation.M[c] = Mr
        bank.observation.Sigma[c] = Sr
    return bank


@dataclass
class SyntheticSeries:
    """Generated series plus the hidden quantities used to build it.

    `pseudo_obs` holds ``z_t = M_r u_r(r_t)``, which equals the load plus
    observation noise; `types` are the 1-based calendar types.
    """

    series: LoadSeries
    pseudo_obs: np.ndarray
    types: np.ndarray
    generator: str = "hmm-pseudo-observation"


def synthesize_hmm(bank, T, seed, start=datetime(2021, 1, 1), cal=None, s0=None,
                   feature_noise=1.0, burn_in=168):
    """Sample ``T`` hourly steps from the vector HMM described by `bank`.

    Generative model, with ``c = c(t)``::

        s_t = M_s,c [1, s_{t-1}] + w_t,      w_t ~ N(0, Sigma_s,c)
        z_t = s_t + v_t,                     v_t ~ N(0, Sigma_r,c)
        u_t = pinv(M_r,c) z_t + (I - pinv(M_r,c) M_r,c) xi_t

    so the transition density holds exactly and ``p(r_t | s_t)`` is
    proportional to ``N(s_t; M_r,c u_t, Sigma_r,c)``. The features are
    returned as the weather block (use the identity feature map).

    Raises
    ------
    ValueError
        If a covariance of `bank` is not positive definite.
    """
    rng = np.random.default_rng(seed)
    cal = cal or CalendarModel(n_types=bank.C)
    K, R, C = bank.K, bank.R, bank.C
    chol_s, chol_r, pinv_r, null_r = [], [], [], []
    for c in range(C):
        try:
            chol_s.append(np.linalg.cholesky(bank.transition.Sigma[c]))
            chol_r.append(np.linalg.cholesky(bank.observation.Sigma[c]))
        except np.linalg.LinAlgError:
            raise ValueError(f"true covariance of calendar type {c + 1} is not positive definite") from None
        Mr = bank.observation.M[c]
        pi = np.linalg.pinv(Mr)
        pinv_r.append(pi)
        null_r.append(np.eye(K * R) - pi @ Mr)

    timestamps = [start + i * HOUR for i in range(-burn_in, T)]
    types = np.array([cal(ts) for ts in timestamps])
    if s0 is None:
        M0 = bank.transition.M[types[0] - 1]
        try:
            s = np.linalg.solve(np.eye(K) - M0[:, 1:], M0[:, 0])
        except np.linalg.LinAlgError:
            s = M0[:, 0].copy()
    else:
        s = np.asarray(s0, dtype=float)
    loads = np.empty((T, K))
    feats = np.empty((T, K * R))
    zs = np.empty((T, K))
    for n, c in enumerate(types):
        i = c - 1
        M_s = bank.transition.M[i]
        s = M_s[:, 0] + M_s[:, 1:] @ s + chol_s[i] @ rng.standard_normal(K)
        z = s + chol_r[i] @ rng.standard_normal(K)
        u = pinv_r[i] @ z + feature_noise * (null_r[i] @ rng.standard_normal(K * R))
        j = n - burn_in
        if j >= 0:
            loads[j], zs[j], feats[j] = s, z, u
    series = LoadSeries(timestamps[burn_in:], loads, feats.reshape(T, K, R),
                        [str(k + 1) for k in range(K)])
    return SyntheticSeries(series, zs, types[burn_in:])
