import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loadhmm.errors import NotPositiveDefiniteError
from loadhmm.gaussian import (GaussianDensity, fuse_gaussians, jitter_amount, pd_factor,
                              solve_spd, spd_cho_factor, symmetrize)

from conftest import random_spd


class TestFactor:
    def test_identity(self):
        np.testing.assert_array_equal(pd_factor(np.eye(3)), np.eye(3))

    def test_two_by_two(self):
        A = np.array([[4.0, 2.0], [2.0, 3.0]])
        L = pd_factor(A)
        np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)
        np.testing.assert_allclose(L @ L.T, A, atol=1e-12)

    def test_indefinite(self):
        assert pd_factor(np.array([[1.0, 2.0], [2.0, 1.0]])) is None
        with pytest.raises(NotPositiveDefiniteError):
            spd_cho_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_jitter_rescues_singular(self):
        A = np.zeros((2, 2))
        _, jittered = spd_cho_factor(A)
        assert jittered
        assert jitter_amount(A) == pytest.approx(1e-9)
        with pytest.raises(NotPositiveDefiniteError):
            spd_cho_factor(A, jitter=False)

    def test_jitter_scales_with_trace(self):
        A = np.diag([400.0, 0.0])
        assert jitter_amount(A) == pytest.approx(1e-9 * 200.0)


class TestSolve:
    def test_identity(self, rng):
        B = rng.normal(size=(3, 2))
        np.testing.assert_allclose(solve_spd(np.eye(3), B), B)

    def test_diagonal(self):
        X = solve_spd(np.diag([2.0, 4.0]), np.array([[2.0], [8.0]]))
        np.testing.assert_allclose(X, [[1.0], [2.0]])

    def test_random_residual(self, rng):
        for _ in range(20):
            A = random_spd(rng, 5)
            B = rng.normal(size=(5, 3))
            X = solve_spd(A, B)
            assert np.linalg.norm(A @ X - B) <= 1e-10 * np.linalg.norm(B)


def test_symmetrize_stack(rng):
    X = rng.normal(size=(4, 3, 3))
    S = symmetrize(X)
    np.testing.assert_array_equal(S, np.swapaxes(S, 1, 2))


class TestDensity:
    def test_logpdf_matches_scipy(self, rng):
        from scipy.stats import multivariate_normal

        cov = random_spd(rng, 3)
        mean = rng.normal(size=3)
        x = rng.normal(size=(5, 3))
        g = GaussianDensity(mean, cov)
        np.testing.assert_allclose(g.logpdf(x), multivariate_normal(mean, cov).logpdf(x), rtol=1e-12)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            GaussianDensity(np.zeros(2), np.eye(3))


class TestFuse:
    def test_symmetric_fusion_halves_variance(self):
        post, ev = fuse_gaussians(np.zeros(2), np.eye(2), np.eye(2), np.eye(2), np.zeros(2))
        np.testing.assert_allclose(post.mean, 0.0, atol=1e-15)
        np.testing.assert_allclose(post.cov, 0.5 * np.eye(2))
        np.testing.assert_allclose(ev.cov, 2.0 * np.eye(2))

    def test_uninformative_observation(self, rng):
        a, B = rng.normal(size=2), random_spd(rng, 2)
        post, _ = fuse_gaussians(a, B, np.eye(2), 1e12 * np.eye(2), rng.normal(size=2))
        np.testing.assert_allclose(post.mean, a, atol=1e-9)
        np.testing.assert_allclose(post.cov, B, atol=1e-9)

    def test_information_form(self, rng):
        a, B, D = rng.normal(size=3), random_spd(rng, 3), random_spd(rng, 2)
        C, y = rng.normal(size=(2, 3)), rng.normal(size=2)
        post, _ = fuse_gaussians(a, B, C, D, y)
        e = np.linalg.solve(B, a) + C.T @ np.linalg.solve(D, y)
        np.testing.assert_allclose(np.linalg.solve(post.cov, post.mean), e, rtol=1e-10, atol=1e-10)
        np.testing.assert_array_equal(post.cov, post.cov.T)
        assert np.linalg.eigvalsh(post.cov).min() > 0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4))
    def test_pointwise_identity(self, seed, n, m):
        rng = np.random.default_rng(seed)
        a, B, D = rng.normal(size=n), random_spd(rng, n), random_spd(rng, m)
        C, y = rng.normal(size=(m, n)), rng.normal(size=m)
        post, ev = fuse_gaussians(a, B, C, D, y)
        for x in rng.normal(size=(20, n)):
            lhs = GaussianDensity(a, B).logpdf(x) + GaussianDensity(C @ x, D).logpdf(y)
            rhs = post.logpdf(x) + ev.logpdf(y)
            assert abs(np.expm1(lhs - rhs)) <= 1e-9
