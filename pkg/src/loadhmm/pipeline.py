"""Rolling-origin experiment driver, synthetic self-consistency runs and benchmarks.

Each day at the prediction hour ``t`` the driver first feeds the learner
every pending slice whose loads are already available, then forecasts the
next ``L`` hours from the newest available load ``s_{t-d}`` (bridging the
``d`` unobserved hours with model predictions only) using sparsified copies
of the covariances, and finally queues the new slice for learning. A day's
forecast therefore never conditions on that day's actuals.
"""
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .config import RunConfig, read_holidays
from .data import (FeatureMap, apply_delay, feature_matrix, load_csv, make_true_bank,
                   synthesize_hmm)
from .errors import ConfigError, NumericalError
from .forecaster import ProbabilisticForecast, forecast_path
from .learner import TrainingSlice, learning_step
from .metrics import QUANTILES, ScoreAccumulator, calibration, gaussian_quantiles
from .model import CalendarModel, ModelBank, ModelStack, init_model, load_bank, save_bank
from .sparsify import SparsifyPolicy, threshold_covariance

log = logging.getLogger(__name__)

_SQRT_PI = np.sqrt(np.pi)
QUANTILE_COLUMNS = [f"q{int(round(q * 100)):02d}" for q in QUANTILES]


@dataclass
class RunResult:
    """Everything a rolling run produced, in memory."""

    config: RunConfig
    entities: list
    scores: ScoreAccumulator
    bank: ModelBank
    forecasts: list = field(default_factory=list)
    actuals: list = field(default_factory=list)
    scored: list = field(default_factory=list)
    reference_scores: ScoreAccumulator = None
    reference_expected_crps: np.ndarray = None
    n_forecasts: int = 0
    n_skipped: int = 0
    feature_fallbacks: int = 0
    gaps: list = field(default_factory=list)

    @property
    def labels(self):
        return self.scores.labels

    def metrics(self):
        return self.scores.rows()

    def pooled(self):
        """Entity columns pooled into one sample (the aggregate column is excluded)."""
        return pooled_scores(self.scores, range(len(self.entities)))


def pooled_scores(acc, cols):
    cols = list(cols)
    s = acc.sums
    n = s["n"][cols].sum()
    if n == 0:
        return {"n": 0}
    hits = acc.hits[cols].sum(axis=0)
    ape_n = s["ape_n"][cols].sum()
    return {
        "n": int(n),
        "rmse": float(np.sqrt(s["sq"][cols].sum() / n)),
        "mae": float(s["abs"][cols].sum() / n),
        "mape": float(100.0 * s["ape"][cols].sum() / ape_n) if ape_n else float("nan"),
        "crps": float(s["crps"][cols].sum() / n),
        "pinball": float(acc.pinball[cols].sum(axis=0).mean() / n),
        "ce": calibration(hits, n, acc.quantiles).ce,
        "coverage_2sd": float(s["cover2"][cols].sum() / n),
    }


def sparsified_bank(bank, policy):
    """Bank sharing `bank`'s means and recursion state but with thresholded covariances."""
    if policy is None or not policy.enabled:
        return bank
    tr, ob = bank.transition, bank.observation
    return ModelBank(
        bank.K, bank.R, bank.C,
        ModelStack(tr.M, threshold_covariance(tr.Sigma, policy), tr.P, tr.gamma),
        ModelStack(ob.M, threshold_covariance(ob.Sigma, policy), ob.P, ob.gamma),
        bank.lambda_s, bank.lambda_r,
    )


def _prepare_series(cfg, series):
    if series is None:
        if not cfg.data:
            raise ConfigError("no data file configured")
        series = load_csv(cfg.data)
    if series.gaps:
        log.warning("%d gap(s) in the data; missing hours are treated as unobserved", len(series.gaps))
    gaps = list(series.gaps)
    series = series.to_hourly()
    if cfg.entities_subset:
        if max(cfg.entities_subset) > series.n_entities:
            raise ConfigError(
                f"entities_subset refers to column {max(cfg.entities_subset)} "
                f"but the data has {series.n_entities} entities"
            )
        series = series.select([i - 1 for i in cfg.entities_subset])
    if cfg.K and cfg.K != series.n_entities:
        raise ConfigError(f"K={cfg.K} but the data provides {series.n_entities} entities")
    return series, gaps


def _prepare_bank(cfg, K, R, bank):
    if bank is None and cfg.snapshot_in:
        try:
            bank = load_bank(cfg.snapshot_in)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read snapshot {cfg.snapshot_in}: {exc}") from None
    if bank is None:
        return init_model(K, R, cfg.C, cfg.lambda_s, cfg.lambda_r)
    if (bank.K, bank.R, bank.C) != (K, R, cfg.C):
        raise ConfigError(
            f"warm-start bank has K={bank.K}, R={bank.R}, C={bank.C}; run needs K={K}, R={R}, C={cfg.C}"
        )
    return bank.copy()


def run_rolling(cfg, series=None, bank=None, reference_bank=None, keep_forecasts=True):
    """Run the daily predict-then-learn loop over a whole series.

    Parameters
    ----------
    cfg : RunConfig
    series : LoadSeries, optional
        Used instead of reading ``cfg.data``.
    bank : ModelBank, optional
        Warm-start bank (copied); overrides ``cfg.snapshot_in``.
    reference_bank : ModelBank, optional
        When given, the exact (unsparsified) forecasts of this bank are
        scored alongside, and their expected CRPS ``sigma / sqrt(pi)`` is
        accumulated for every scored sample.
    keep_forecasts : bool
        Keep every forecast and its actuals in the result.

    Returns
    -------
    RunResult

    Raises
    ------
    ConfigError, DataError
        On invalid settings or unusable data.
    NumericalError
        If a forecast contains non-finite values; the message names the
        prediction time.
    """
    series, gaps = _prepare_series(cfg, series)
    K = series.n_entities
    cal = CalendarModel(holidays=read_holidays(cfg.holidays), n_types=cfg.C)
    if cfg.feature_map == "identity" and cfg.R != series.n_weather:
        raise ConfigError(f"identity feature map needs R = {series.n_weather} (weather columns per entity)")
    fmap = FeatureMap(cfg.feature_map, K, cfg.C, series.n_weather, cfg.feature_smoothing)
    U = feature_matrix(series, fmap, cal)
    types = cal.types(series.timestamps)
    loads = series.loads
    bank = _prepare_bank(cfg, K, cfg.R, bank)
    policy = SparsifyPolicy(cfg.tau, cfg.sparsify)
    delayed = apply_delay(series, cfg.delay)
    d, L = delayed.delay, cfg.L
    H = 24 if cfg.learn == "all" else L

    labels = list(series.entities) + ["aggregate"]
    scores = ScoreAccumulator(labels)
    ref_scores = ScoreAccumulator(labels) if reference_bank is not None else None
    ref_expected = np.zeros(len(labels)) if reference_bank is not None else None
    result = RunResult(cfg, list(series.entities), scores, bank, gaps=gaps,
                       reference_scores=ref_scores, reference_expected_crps=ref_expected)

    T = len(series)
    origins = [i for i in range(T) if series.timestamps[i].hour == cfg.prediction_hour
               and delayed.latest_index(i) >= 0 and i + L <= T - 1]
    pending = []

    def learn_available(now):
        while pending and pending[0] + H <= now:
            b = pending.pop(0)
            h = min(H, T - 1 - b)
            slc = TrainingSlice(series.timestamps[b], loads[b:b + h + 1], U[b + 1:b + h + 1])
            learning_step(bank, slc, cal, order=cfg.update_order, types=types[b + 1:b + h + 1])
            if cfg.sparsify_feedback and policy.enabled:
                bank.transition.Sigma[:] = threshold_covariance(bank.transition.Sigma, policy)
                bank.observation.Sigma[:] = threshold_covariance(bank.observation.Sigma, policy)

    for day, i in enumerate(origins):
        if cfg.learn != "none":
            learn_available(delayed.latest_index(i))
        base = delayed.latest_index(i)
        s_base = loads[base]
        if not np.all(np.isfinite(s_base)):
            log.warning("no load at %s; skipping the forecast issued at %s",
                        series.timestamps[base], series.timestamps[i])
            result.n_skipped += 1
            pending.append(i)
            continue
        span = slice(base + 1, i + L + 1)
        means, covs = forecast_path(sparsified_bank(bank, policy), s_base, U[span], types[span])
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
            raise NumericalError(f"non-finite forecast issued at {series.timestamps[i].isoformat()}")
        fc = ProbabilisticForecast(series.timestamps[base], means, covs,
                                   conditioned_on=series.timestamps[base]).drop_leading(d)
        result.n_forecasts += 1
        actual = loads[i + 1:i + L + 1]
        is_scored = day >= cfg.warmup_days
        if is_scored:
            scores.add(*_columns(actual, fc.means, fc.covs))
            if reference_bank is not None:
                rm, rc = forecast_path(reference_bank, s_base, U[span], types[span])
                rm, rc = rm[d:], rc[d:]
                a, mu, sd = _columns(actual, rm, rc)
                ref_scores.add(a, mu, sd)
                ref_expected += np.where(np.isfinite(a), sd, 0.0).sum(axis=0) / _SQRT_PI
        if keep_forecasts:
            result.forecasts.append(fc)
            result.actuals.append(actual)
            result.scored.append(is_scored)
        pending.append(i)

    if cfg.learn != "none":
        learn_available(T - 1)
    result.feature_fallbacks = fmap.n_fallback
    if ref_expected is not None:
        with np.errstate(invalid="ignore", divide="ignore"):
            result.reference_expected_crps = ref_expected / ref_scores.sums["n"]
    return result


def _columns(actual, means, covs):
    """Per-entity plus aggregate columns of actuals, means and standard deviations."""
    std = np.sqrt(np.clip(np.diagonal(covs, axis1=1, axis2=2), 0.0, None))
    agg_actual = actual.sum(axis=1)
    agg_std = np.sqrt(np.clip(covs.sum(axis=(1, 2)), 0.0, None))
    return (np.column_stack([actual, agg_actual]),
            np.column_stack([means, means.sum(axis=1)]),
            np.column_stack([std, agg_std]))


# --- artifacts ---------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "" if not np.isfinite(x) else repr(float(x))
    return str(x)


def _write_csv(path, digest, header, rows):
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# config_sha256={digest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    return obj


def write_artifacts(result, out_dir):
    """Write forecasts, intervals, metrics, calibration and heat-map tables.

    Returns the list of written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = result.config.digest()
    labels = result.labels

    fc_rows, iv_rows, hm_rows = [], [], []
    for fc, actual in zip(result.forecasts, result.actuals):
        a, mu, sd = _columns(actual, fc.means, fc.covs)
        qs = gaussian_quantiles(mu, sd)
        issue = fc.base_time.isoformat()
        for step, ts in enumerate(fc.timestamps()):
            stamp = ts.isoformat()
            for j, label in enumerate(labels):
                fc_rows.append([issue, stamp, step + 1, label, a[step, j], mu[step, j], sd[step, j],
                                *qs[step, j]])
                iv_rows.append([stamp, label, a[step, j], mu[step, j],
                                mu[step, j] - 4 * sd[step, j], mu[step, j] - 2 * sd[step, j],
                                mu[step, j] + 2 * sd[step, j], mu[step, j] + 4 * sd[step, j]])
                hm_rows.append([ts.date().isoformat(), ts.hour, label, a[step, j], mu[step, j],
                                abs(a[step, j] - mu[step, j])])
    paths = []

    def emit(name, header, rows):
        p = out / name
        _write_csv(p, digest, header, rows)
        paths.append(p)

    emit("forecasts.csv", ["issue_time", "timestamp", "step", "entity", "actual", "mean", "std",
                           *QUANTILE_COLUMNS], fc_rows)
    emit("intervals.csv", ["timestamp", "entity", "actual", "mean", "lower_4sd", "lower_2sd",
                           "upper_2sd", "upper_4sd"], iv_rows)
    emit("heatmap.csv", ["date", "hour", "entity", "actual", "mean", "abs_error"], hm_rows)
    rows = result.metrics()
    keys = ["entity", "n", "rmse", "mae", "mape", "mape_excluded", "crps", "pinball", "ce", "coverage_2sd"]
    emit("metrics.csv", keys, [[r[k] for k in keys] for r in rows])
    cal_rows = []
    for j, label in enumerate(labels):
        if result.scores.sums["n"][j] > 0:
            c = result.scores.calibration(j)
            cal_rows.extend([label, q, v] for q, v in zip(c.quantiles, c.curve))
    emit("calibration.csv", ["entity", "q", "observed"], cal_rows)

    doc = {
        "config_sha256": digest,
        "metrics": rows,
        "pooled_entities": result.pooled(),
        "n_forecasts": result.n_forecasts,
        "n_skipped": result.n_skipped,
        "feature_fallbacks": result.feature_fallbacks,
        "gaps": [[g.after.isoformat(), g.before.isoformat(), g.missing_hours] for g in result.gaps],
    }
    p = out / "metrics.json"
    p.write_text(json.dumps(to_jsonable(doc), indent=2, sort_keys=True) + "\n")
    paths.append(p)
    return paths


def run_and_report(cfg):
    """CLI entry: run, write artifacts and the snapshot; returns the :class:`RunResult`."""
    result = run_rolling(cfg)
    if cfg.output_dir:
        write_artifacts(result, cfg.output_dir)
    snap = cfg.snapshot_out or (str(Path(cfg.output_dir) / "model.json") if cfg.output_dir else "")
    if snap:
        save_bank(result.bank, snap)
    return result


# --- synthetic self-consistency -------------------------------------------------------

MANIFEST_DEFAULTS = {
    "seed": 0,
    "K": 4,
    "R": 1,
    "C": 48,
    "days": 365,
    "start": "2021-01-04",
    "truth": None,
    "truth_params": {},
    "sigma_scale": 1.0,
    "learn": "none",
    "lambda_s": 0.9,
    "lambda_r": 0.9,
    "tau": 0.1,
    "sparsify": True,
    "warmup_days": 0,
    "prediction_hour": 11,
    "L": 24,
    "delay": 0,
    "output_dir": None,
}


def read_manifest(manifest):
    """Manifest dict (or JSON file path) merged over :data:`MANIFEST_DEFAULTS`."""
    if not isinstance(manifest, dict):
        path = Path(manifest)
        if not path.exists():
            raise ConfigError(f"manifest not found: {path}")
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from None
        if manifest.get("truth") and not Path(manifest["truth"]).is_absolute():
            manifest["truth"] = str(path.parent / manifest["truth"])
    unknown = set(manifest) - set(MANIFEST_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown manifest keys: {sorted(unknown)}")
    m = dict(MANIFEST_DEFAULTS, **manifest)
    if float(m["sigma_scale"]) <= 0:
        raise ConfigError("sigma_scale must be positive")
    return m


def synthetic_data(m):
    """``(truth, generator_bank, SyntheticSeries)`` for a manifest dict (see :func:`read_manifest`)."""
    m = read_manifest(m)
    if m["truth"]:
        truth = load_bank(m["truth"])
    else:
        truth = make_true_bank(int(m["K"]), int(m["R"]), int(m["C"]), seed=int(m["seed"]),
                               lambda_s=m["lambda_s"], lambda_r=m["lambda_r"], **m["truth_params"])
    gen = truth.copy()
    gen.transition.Sigma *= float(m["sigma_scale"])
    gen.observation.Sigma *= float(m["sigma_scale"])
    synth = synthesize_hmm(gen, 24 * int(m["days"]) + int(m["L"]), seed=int(m["seed"]) + 1,
                           start=datetime.fromisoformat(m["start"]), cal=CalendarModel(n_types=truth.C))
    return truth, gen, synth


def run_synthetic_eval(manifest):
    """Generate data from known parameters, run the rolling loop and score it.

    The model is warm-started at the true bank; with ``learn = "none"`` it
    stays there. ``sigma_scale`` multiplies every true covariance used for
    *generation* only, so values other than 1 give a misspecified model.

    Returns
    -------
    dict
        Pooled entity scores, aggregate scores, the optimal CRPS
        ``E[CRPS] = sigma_true / sqrt(pi)`` of the exact predictive of the
        generating parameters, and the ratio of achieved to optimal CRPS.
    """
    m = read_manifest(manifest)
    truth, gen, synth = synthetic_data(m)
    K, R, C = truth.K, truth.R, truth.C
    cfg = RunConfig(K=K, R=R, feature_map="identity", C=C, L=int(m["L"]),
                    prediction_hour=int(m["prediction_hour"]), lambda_s=truth.lambda_s,
                    lambda_r=truth.lambda_r, tau=float(m["tau"]), sparsify=bool(m["sparsify"]),
                    delay=int(m["delay"]), warmup_days=int(m["warmup_days"]),
                    seed=int(m["seed"]), learn=m["learn"])
    result = run_rolling(cfg, series=synth.series, bank=truth, reference_bank=gen,
                         keep_forecasts=False)
    ents = range(K)
    pooled = result.pooled()
    ref = pooled_scores(result.reference_scores, ents)
    n_ent = result.reference_scores.sums["n"][:K]
    optimal = float((result.reference_expected_crps[:K] * n_ent).sum() / n_ent.sum())
    agg = result.metrics()[-1]
    report = {
        "manifest": m,
        "generator": synth.generator,
        "n_forecasts": result.n_forecasts,
        "pooled": pooled,
        "aggregate": agg,
        "reference_pooled": ref,
        "crps_optimal": optimal,
        "crps_ratio": pooled["crps"] / optimal,
        "per_entity": result.metrics()[:K],
    }
    if m["output_dir"]:
        out = Path(m["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "synth_report.json").write_text(json.dumps(to_jsonable(report), indent=2, sort_keys=True) + "\n")
    return report


# --- benchmark ------------------------------------------------------------------------


def bench_update(dims=(2, 4, 8, 16), R=3, L=24, reps=50, seed=0, C=48):
    """Wall-clock timing of :func:`learning_step` and of one ``L``-step forecast.

    Returns a dict with, per ``K``, the median time in milliseconds (or the
    single sample when ``reps == 1``) and, with at least two sizes and
    ``reps > 1``, log-log scaling exponents and the ``K=16 / K=8`` ratio.
    """
    if reps < 1 or any(k < 1 for k in dims) or R < 1 or L < 1:
        raise ConfigError("bench dimensions and reps must be >= 1")
    cal = CalendarModel(n_types=C)
    report = {"R": R, "L": L, "reps": reps, "K": list(dims), "learn_ms": [], "predict_ms": []}
    setups = []
    for K in dims:
        truth = make_true_bank(K, R, C, seed=seed)
        synth = synthesize_hmm(truth, 24 * (reps + 2), seed=seed, cal=cal)
        U = synth.series.weather.reshape(len(synth.series), -1)
        setups.append((truth, truth.copy(), synth, U))
    t_learn = [[] for _ in dims]
    t_pred = [[] for _ in dims]
    for j, (truth, bank, synth, U) in enumerate(setups):
        loads = synth.series.loads
        for r in range(-min(reps, 5), reps):
            # the first few calls warm caches and are not recorded
            b = 24 * max(r, 0)
            slc = TrainingSlice(synth.series.timestamps[b], loads[b:b + L + 1], U[b + 1:b + L + 1])
            tp = synth.types[b + 1:b + L + 1]
            t0 = time.perf_counter()
            learning_step(bank, slc, cal, types=tp)
            t1 = time.perf_counter()
            forecast_path(truth, loads[b], U[b + 1:b + L + 1], tp)
            t2 = time.perf_counter()
            if r >= 0:
                t_learn[j].append(1e3 * (t1 - t0))
                t_pred[j].append(1e3 * (t2 - t1))
    for tl, tpred in zip(t_learn, t_pred):
        report["learn_ms"].append(float(np.median(tl)) if reps > 1 else tl[0])
        report["predict_ms"].append(float(np.median(tpred)) if reps > 1 else tpred[0])
    report["statistics"] = reps > 1
    if reps > 1 and len(dims) >= 2:
        lk = np.log(np.asarray(dims, dtype=float))
        report["learn_exponent"] = float(np.polyfit(lk, np.log(report["learn_ms"]), 1)[0])
        report["predict_exponent"] = float(np.polyfit(lk, np.log(report["predict_ms"]), 1)[0])
        if 8 in dims and 16 in dims:
            i8, i16 = list(dims).index(8), list(dims).index(16)
            report["learn_ratio_16_8"] = report["learn_ms"][i16] / report["learn_ms"][i8]
    return report
