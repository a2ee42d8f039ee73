from datetime import datetime, timedelta

import numpy as np
import pytest

from loadhmm.data import (FeatureMap, LoadSeries, SeriesRecord, apply_delay, build_features,
                          feature_matrix, load_csv, make_true_bank, synthesize_hmm, write_csv)
from loadhmm.errors import DataError
from loadhmm.model import CalendarModel

T0 = datetime(2024, 1, 1)


def write_rows(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


def hourly_rows(n, K=2, skip=()):
    rows = []
    for i in range(n):
        if i in skip:
            continue
        ts = (T0 + timedelta(hours=i)).isoformat()
        rows.append([ts] + [10.0 + i + k for k in range(K)] + [20.0 - k for k in range(K)])
    return rows


HEADER = ["timestamp", "load_a", "load_b", "temp_a", "temp_b"]


class TestLoadCsv:
    def test_basic(self, tmp_path):
        s = load_csv(write_rows(tmp_path / "d.csv", HEADER, hourly_rows(48)))
        assert len(s) == 48 and s.n_entities == 2 and s.n_weather == 1
        assert s.entities == ["a", "b"]
        assert isinstance(s[3], SeriesRecord)
        assert s[3].loads.tolist() == [13.0, 14.0]
        assert not s.gaps

    def test_gap_report(self, tmp_path):
        s = load_csv(write_rows(tmp_path / "d.csv", HEADER, hourly_rows(48, skip={10})))
        assert len(s.gaps) == 1 and s.gaps[0].missing_hours == 1
        h = s.to_hourly()
        assert len(h) == 48 and np.isnan(h.loads[10]).all()

    def test_duplicate(self, tmp_path):
        rows = hourly_rows(5)
        rows.insert(3, rows[2])
        with pytest.raises(DataError, match="line 5"):
            load_csv(write_rows(tmp_path / "d.csv", HEADER, rows))

    def test_non_monotone(self, tmp_path):
        rows = hourly_rows(5)
        rows[2], rows[3] = rows[3], rows[2]
        with pytest.raises(DataError, match="not after"):
            load_csv(write_rows(tmp_path / "d.csv", HEADER, rows))

    def test_malformed_value_has_line_number(self, tmp_path):
        rows = hourly_rows(5)
        rows[1][1] = "abc"
        with pytest.raises(DataError, match="line 3"):
            load_csv(write_rows(tmp_path / "d.csv", HEADER, rows))

    def test_wrong_field_count(self, tmp_path):
        rows = hourly_rows(3)
        rows[2] = rows[2][:-1]
        with pytest.raises(DataError, match="line 4"):
            load_csv(write_rows(tmp_path / "d.csv", HEADER, rows))

    def test_missing_columns(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(write_rows(tmp_path / "d.csv", ["time", "load_a", "temp_a"], []))
        with pytest.raises(DataError):
            load_csv(write_rows(tmp_path / "d.csv", ["timestamp", "load_a"], [[T0.isoformat(), 1]]))
        with pytest.raises(DataError):
            load_csv(tmp_path / "missing.csv")

    def test_sub_hourly(self, tmp_path):
        rows = hourly_rows(2)
        rows[1][0] = (T0 + timedelta(minutes=30)).isoformat()
        with pytest.raises(DataError, match="hourly"):
            load_csv(write_rows(tmp_path / "d.csv", HEADER, rows))

    def test_empty_cells_are_missing(self, tmp_path):
        rows = hourly_rows(3)
        rows[1][1] = ""
        rows[2][3] = ""
        s = load_csv(write_rows(tmp_path / "d.csv", HEADER, rows))
        assert np.isnan(s.loads[1, 0]) and np.isnan(s.weather[2, 0, 0])

    def test_multi_weather_columns(self, tmp_path):
        header = ["timestamp", "load_a", "temp_a_2", "temp_a_1"]
        s = load_csv(write_rows(tmp_path / "d.csv", header, [[T0.isoformat(), 1.0, 7.0, 5.0]]))
        assert s.weather[0, 0].tolist() == [5.0, 7.0]

    def test_round_trip_exact(self, tmp_path, rng):
        n = 30
        series = LoadSeries([T0 + timedelta(hours=i) for i in range(n)], rng.normal(size=(n, 3)) * 1e3,
                            rng.normal(size=(n, 3, 2)), ["x", "y", "z"])
        series.loads[4, 1] = np.nan
        first = load_csv(write_csv(series, tmp_path / "a.csv"))
        second = load_csv(write_csv(first, tmp_path / "b.csv"))
        np.testing.assert_array_equal(first.loads, series.loads)
        np.testing.assert_array_equal(second.weather, series.weather)
        assert second.timestamps == series.timestamps and second.entities == series.entities
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def record(weather):
    return SeriesRecord(T0, np.zeros(len(weather)), np.asarray(weather, dtype=float)[:, None])


class TestFeatures:
    def test_zero_shift(self):
        fmap = FeatureMap("temperature-shift", 1, 48)
        fmap.means[0, 0], fmap.seen[0, 0] = 15.0, True
        np.testing.assert_array_equal(build_features(record([15.0]), fmap, 1), [1.0, 0.0, 0.0])

    def test_shift_of_two(self):
        fmap = FeatureMap("temperature-shift", 1, 48)
        fmap.means[4, 0], fmap.seen[4, 0] = 15.0, True
        np.testing.assert_array_equal(build_features(record([17.0]), fmap, 5), [1.0, 2.0, 4.0])
        assert fmap.means[4, 0] == pytest.approx(0.95 * 15.0 + 0.05 * 17.0)

    def test_identity(self):
        fmap = FeatureMap("identity", 1, 48)
        np.testing.assert_array_equal(build_features(record([5.0]), fmap, 3), [5.0])

    def test_missing_weather_fallback(self):
        fmap = FeatureMap("temperature-shift", 2, 48)
        out = build_features(record([np.nan, 3.0]), fmap, 1)
        np.testing.assert_array_equal(out[:3], [1.0, 0.0, 0.0])
        assert fmap.n_fallback == 1

    def test_first_observation_initializes_mean(self):
        fmap = FeatureMap("temperature-shift", 1, 48)
        np.testing.assert_array_equal(build_features(record([12.0]), fmap, 1), [1.0, 0.0, 0.0])
        assert fmap.means[0, 0] == 12.0

    def test_deterministic(self, rng):
        w = rng.normal(size=(20, 2)) + 15
        outs = []
        for _ in range(2):
            fmap = FeatureMap("temperature-shift", 2, 48)
            outs.append([build_features(record(x), fmap, 7) for x in w])
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_running_mean_converges(self, rng):
        fmap = FeatureMap("temperature-shift", 1, 2)
        for _ in range(100):
            build_features(record([20.0 + 0.5 * rng.normal()]), fmap, 2)
        assert abs(fmap.means[1, 0] - 20.0) < 0.02 * 20.0

    def test_feature_matrix_shape(self, tmp_path):
        s = load_csv(write_rows(tmp_path / "d.csv", HEADER, hourly_rows(10)))
        U = feature_matrix(s, FeatureMap("temperature-shift", 2, 48), CalendarModel())
        assert U.shape == (10, 6)

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            FeatureMap("spline", 1, 48)


class TestSynthetic:
    def test_same_seed_same_series(self):
        bank = make_true_bank(2, 1, 48, seed=1)
        a = synthesize_hmm(bank, 200, seed=3)
        b = synthesize_hmm(bank, 200, seed=3)
        np.testing.assert_array_equal(a.series.loads, b.series.loads)
        np.testing.assert_array_equal(a.series.weather, b.series.weather)
        assert np.all(np.isfinite(a.series.loads))

    def test_noise_free_limit_follows_mean_recursion(self):
        bank = make_true_bank(2, 1, 48, seed=2)
        bank.transition.Sigma[:] = 1e-20 * np.eye(2)
        syn = synthesize_hmm(bank, 100, seed=0)
        s = syn.series.loads
        for t in range(1, 100):
            M = bank.transition.M[syn.types[t] - 1]
            np.testing.assert_allclose(s[t], M[:, 0] + M[:, 1:] @ s[t - 1], atol=1e-8)

    def test_features_reproduce_pseudo_observation(self):
        bank = make_true_bank(3, 2, 48, seed=2)
        syn = synthesize_hmm(bank, 50, seed=1)
        U = syn.series.weather.reshape(50, -1)
        for t in range(50):
            np.testing.assert_allclose(bank.observation.M[syn.types[t] - 1] @ U[t], syn.pseudo_obs[t], atol=1e-10)

    def test_regression_recovers_transition(self):
        bank = make_true_bank(2, 1, 1, seed=6)
        syn = synthesize_hmm(bank, 100_000, seed=7, cal=CalendarModel(n_types=1))
        s = syn.series.loads
        X = np.column_stack([np.ones(len(s) - 1), s[:-1]])
        coef, *_ = np.linalg.lstsq(X, s[1:], rcond=None)
        resid = s[1:] - X @ coef
        Sigma_hat = resid.T @ resid / (len(s) - 1 - 3)
        XtX_inv = np.linalg.inv(X.T @ X)
        se = np.sqrt(np.outer(np.diag(XtX_inv), np.diag(Sigma_hat)))
        assert np.all(np.abs(coef - bank.transition.M[0].T) <= 3 * se)
        truth = bank.transition.Sigma[0]
        assert np.linalg.norm(Sigma_hat - truth) <= 0.05 * np.linalg.norm(truth)

    def test_non_pd_truth(self):
        bank = make_true_bank(2, 1, 48, seed=0)
        bank.observation.Sigma[3] = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(ValueError, match="type 4"):
            synthesize_hmm(bank, 10, seed=0)


class TestDelay:
    def make(self):
        n = 48
        return LoadSeries([T0 + timedelta(hours=i) for i in range(n)], np.arange(n, dtype=float)[:, None],
                          np.zeros((n, 1, 1)), ["a"])

    def test_zero_delay(self):
        d = apply_delay(self.make(), 0)
        assert d.latest_load(10)[1][0] == 10.0

    def test_max_delay(self):
        d = apply_delay(self.make(), 23)
        ts, load = d.latest_load(30)
        assert ts == T0 + timedelta(hours=7) and load[0] == 7.0
        with pytest.raises(IndexError):
            d.latest_load(5)

    @pytest.mark.parametrize("bad", [-1, 24, 2.5])
    def test_range(self, bad):
        with pytest.raises(ValueError):
            apply_delay(self.make(), bad)
