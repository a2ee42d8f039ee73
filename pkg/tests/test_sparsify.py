import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loadhmm.sparsify import (SparsifyPolicy, correlation, rank_one_corrections,
                              threshold_covariance, weak_pairs)


def random_psd(rng, K):
    rank = rng.integers(1, K + 1)
    A = rng.normal(size=(K, rank)) * rng.uniform(0.1, 3.0, size=rank)
    S = A @ A.T
    # push some correlations toward zero so both branches get exercised
    D = np.diag(rng.uniform(0.1, 5.0, size=K))
    return D @ S @ D if rng.uniform() < 0.5 else S + np.diag(rng.uniform(0, 4, size=K))


class TestCorrelation:
    def test_identity(self):
        assert correlation(np.eye(3), 0, 2) == 0.0

    def test_formula(self):
        assert correlation(np.array([[4.0, 2.0], [2.0, 1.0]]), 0, 1) == pytest.approx(1.0)

    def test_zero_entry(self):
        assert correlation(np.array([[1.0, 0.0], [0.0, 2.0]]), 0, 1) == 0.0

    def test_zero_variance(self):
        assert correlation(np.zeros((2, 2)), 0, 1) == 0.0


class TestThreshold:
    def test_weak_pair_moved_to_diagonal(self):
        out = threshold_covariance(np.array([[1.0, 0.05], [0.05, 1.0]]), SparsifyPolicy(0.1))
        np.testing.assert_allclose(out, [[1.05, 0.0], [0.0, 1.05]], atol=1e-15)
        assert np.linalg.eigvalsh(out).min() > 0

    def test_diagonal_unchanged(self):
        S = np.diag([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(threshold_covariance(S), S)

    def test_strong_pair_kept(self):
        S = np.array([[1.0, 0.5], [0.5, 1.0]])
        np.testing.assert_array_equal(threshold_covariance(S, SparsifyPolicy(0.1)), S)

    def test_negative_covariance_sign(self):
        out = threshold_covariance(np.array([[1.0, -0.05], [-0.05, 1.0]]))
        np.testing.assert_allclose(out, [[1.05, 0.0], [0.0, 1.05]], atol=1e-15)

    def test_disabled_and_input_untouched(self):
        S = np.array([[1.0, 0.05], [0.05, 1.0]])
        before = S.copy()
        np.testing.assert_array_equal(threshold_covariance(S, SparsifyPolicy(0.1, enabled=False)), S)
        threshold_covariance(S)
        np.testing.assert_array_equal(S, before)

    def test_stack_matches_single(self, rng):
        stack = np.array([random_psd(rng, 4) for _ in range(5)])
        out = threshold_covariance(stack, SparsifyPolicy(0.3))
        for S, O in zip(stack, out):
            np.testing.assert_array_equal(threshold_covariance(S, SparsifyPolicy(0.3)), O)

    def test_rank_one_sum_reproduces_output(self, rng):
        S = random_psd(rng, 5)
        policy = SparsifyPolicy(0.4)
        out = S.copy()
        for v in rank_one_corrections(S, policy):
            out += np.outer(v, v)
        mask = weak_pairs(S, 0.4)
        np.testing.assert_allclose(out[mask], 0.0, atol=1e-14)
        np.testing.assert_allclose(out, threshold_covariance(S, policy), atol=1e-13)

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            SparsifyPolicy(1.0)
        with pytest.raises(ValueError):
            SparsifyPolicy(-0.1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.floats(0.0, 0.9))
    def test_properties(self, seed, K, tau):
        rng = np.random.default_rng(seed)
        S = random_psd(rng, K)
        out = threshold_covariance(S, SparsifyPolicy(tau))
        mask = weak_pairs(S, tau)
        off = ~np.eye(K, dtype=bool)
        assert np.all(out[mask] == 0.0)
        np.testing.assert_array_equal(out[off & ~mask], S[off & ~mask])
        assert np.linalg.eigvalsh(out - S).min() >= -1e-12 * np.trace(S)
        assert np.linalg.eigvalsh(out).min() >= -1e-10 * np.trace(S) / K
        expected = np.trace(S) + np.abs(S[mask]).sum()
        assert abs(np.trace(out) - expected) <= 1e-12 * max(1.0, expected)
        again = threshold_covariance(out, SparsifyPolicy(tau))
        assert np.all(again[mask] == 0.0)
