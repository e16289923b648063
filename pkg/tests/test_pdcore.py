import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special, stats

from blockprec.pdcore import (
    InvalidInputError,
    NoIntervalError,
    SampleStats,
    as_sym,
    cholesky_logdet,
    digamma,
    gaussian_loglik,
    is_pd,
    log_gamma,
    pd_interval,
)
from conftest import random_pd


def test_as_sym_mirrors_upper_triangle():
    X = np.array([[1.0, 2.0], [99.0, 3.0]])
    assert np.array_equal(as_sym(X), [[1.0, 2.0], [2.0, 3.0]])


def test_as_sym_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        as_sym(np.ones((2, 3)))
    with pytest.raises(InvalidInputError):
        as_sym([[1.0, np.nan], [0.0, 1.0]])


class TestCholeskyLogdet:
    def test_identity(self):
        assert cholesky_logdet(np.eye(3)) == (0.0, True)

    def test_diagonal(self):
        val, ok = cholesky_logdet(np.diag([2.0, 2.0]))
        assert ok and val == pytest.approx(2 * math.log(2), rel=1e-12)

    def test_indefinite(self):
        assert cholesky_logdet([[1.0, 2.0], [2.0, 1.0]])[1] is False

    def test_non_finite(self):
        with pytest.raises(InvalidInputError):
            cholesky_logdet([[np.inf, 0.0], [0.0, 1.0]])

    @given(st.integers(1, 20), st.integers(0, 2**32 - 1))
    def test_matches_eigenvalue_sum(self, d, seed):
        X = random_pd(np.random.default_rng(seed), d, cond=1e3)
        val, ok = cholesky_logdet(X)
        ref = np.sum(np.log(np.linalg.eigvalsh(X)))
        assert ok
        assert abs(val - ref) <= 1e-10 * max(1.0, abs(ref))


class TestIsPD:
    def test_examples(self):
        assert is_pd(np.eye(4))
        assert not is_pd(np.zeros((2, 2)))
        assert is_pd([[1.0, 0.99], [0.99, 1.0]])

    def test_semidefinite_is_not_pd(self):
        v = np.array([[1.0], [1.0]])
        assert not is_pd(v @ v.T)


class TestPdInterval:
    def test_identity_offdiag(self):
        lo, hi = pd_interval(np.eye(2), 0, 1)
        assert lo == pytest.approx(-1.0, abs=1e-14) and hi == pytest.approx(1.0, abs=1e-14)
        lo, hi = pd_interval(np.eye(3), 0, 1)
        assert lo == pytest.approx(-1.0, abs=1e-14) and hi == pytest.approx(1.0, abs=1e-14)

    def test_diagonal_entry(self):
        X = np.array([[2.0, 1.0], [1.0, 123.0]])
        lo, hi = pd_interval(X, 1, 1)
        assert lo == pytest.approx(0.5, abs=1e-14) and hi == math.inf
        # brute-force grid check of det = 2t - 1
        for t in np.linspace(-2, 2, 401):
            Y = X.copy()
            Y[1, 1] = t
            if abs(t - 0.5) > 1e-9:
                assert is_pd(Y) == (t > 0.5)

    def test_ignores_current_value(self):
        X = np.eye(3)
        X[0, 2] = X[2, 0] = 50.0
        assert pd_interval(X, 0, 2) == pytest.approx((-1.0, 1.0))

    def test_order_of_indices_irrelevant(self, rng):
        X = random_pd(rng, 5)
        assert pd_interval(X, 1, 3) == pd_interval(X, 3, 1)

    def test_no_interval(self):
        X = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [2.0, 0.0, 1.0]])
        with pytest.raises(NoIntervalError):
            pd_interval(X, 0, 1)

    def test_schur_complement_oracle(self, rng):
        # for the off-diagonal (i, j) the interval is centred at the value that
        # zeroes the conditional covariance, with half-width from two Schur complements
        for _ in range(50):
            d = int(rng.integers(2, 7))
            X = random_pd(rng, d)
            i, j = sorted(rng.choice(d, 2, replace=False))
            rest = [k for k in range(d) if k not in (i, j)]
            A = X[np.ix_(rest, rest)] if rest else np.zeros((0, 0))
            bi, bj = X[rest, i], X[rest, j]
            Ainv = np.linalg.inv(A) if rest else A
            si = X[i, i] - bi @ Ainv @ bi
            sj = X[j, j] - bj @ Ainv @ bj
            c = bi @ Ainv @ bj
            half = math.sqrt(si * sj)
            lo, hi = pd_interval(X, i, j)
            assert lo == pytest.approx(c - half, rel=1e-9, abs=1e-10)
            assert hi == pytest.approx(c + half, rel=1e-9, abs=1e-10)

    @given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.data())
    def test_endpoint_certification(self, d, seed, data):
        X = random_pd(np.random.default_rng(seed), d)
        i = data.draw(st.integers(0, d - 1))
        j = data.draw(st.integers(0, d - 1))
        lo, hi = pd_interval(X, i, j)
        if i == j:
            assert hi == math.inf and math.isfinite(lo)
        else:
            assert math.isfinite(lo) and math.isfinite(hi)
        for b, inside in ((lo, +1), (hi, -1)):
            if not math.isfinite(b):
                continue
            eps = 1e-8 * (1.0 + abs(b))
            for t, want in ((b + inside * eps, True), (b - inside * eps, False)):
                Y = X.copy()
                Y[i, j] = Y[j, i] = t
                assert is_pd(Y) is want


class TestSpecialFunctions:
    def test_examples(self):
        assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-15)
        assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-12)
        assert digamma(1.0) == pytest.approx(-0.5772156649015329, rel=1e-12)

    def test_domain(self):
        for f in (log_gamma, digamma):
            with pytest.raises(ValueError):
                f(0.0)
            with pytest.raises(ValueError):
                f(-1.5)

    def test_against_scipy_on_log_grid(self):
        x = np.logspace(-3, 6, 20001)
        lg = log_gamma(x)
        ref = special.gammaln(x)
        # relative error, with an absolute floor at the zeros x = 1, 2
        err = np.abs(lg - ref) / np.maximum(np.abs(ref), 1e-3)
        assert err.max() <= 1e-10
        dg = digamma(x)
        ref = special.digamma(x)
        err = np.abs(dg - ref) / np.maximum(np.abs(ref), 1e-3)
        assert err.max() <= 1e-10

    @given(st.floats(1e-3, 1e6))
    def test_recurrences(self, x):
        assert log_gamma(x + 1.0) - log_gamma(x) == pytest.approx(math.log(x), rel=1e-9, abs=1e-9)
        assert digamma(x + 1.0) - digamma(x) == pytest.approx(1.0 / x, rel=1e-9, abs=1e-12)

    def test_vectorized_shape(self):
        x = np.array([0.5, 1.0, 2.5])
        assert log_gamma(x).shape == (3,)
        assert isinstance(log_gamma(2.5), float)


class TestGaussianLoglik:
    def test_identity_example(self):
        stats_ = SampleStats.from_scatter(np.eye(2), n=2)
        val = gaussian_loglik(stats_, np.eye(2))
        assert val == pytest.approx(-2.0 - 2.0 * math.log(2 * math.pi), rel=1e-12)

    def test_per_datum_oracle(self, rng):
        X = rng.standard_normal((30, 4)) @ rng.standard_normal((4, 4))
        stats_ = SampleStats.from_data(X)
        omega = random_pd(rng, 4)
        ref = stats.multivariate_normal(mean=X.mean(axis=0), cov=np.linalg.inv(omega)).logpdf(X).sum()
        assert gaussian_loglik(stats_, omega) == pytest.approx(ref, abs=1e-9)

    def test_mle_is_stationary(self, rng):
        X = rng.standard_normal((50, 3))
        stats_ = SampleStats.from_data(X)
        mle = np.linalg.inv(stats_.scatter)
        best = gaussian_loglik(stats_, mle)
        for _ in range(20):
            E = rng.standard_normal((3, 3)) * 1e-3
            assert gaussian_loglik(stats_, mle + E + E.T) < best

    def test_not_pd(self):
        with pytest.raises(ValueError):
            gaussian_loglik(SampleStats.from_scatter(np.eye(2), 5), -np.eye(2))

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            gaussian_loglik(SampleStats.from_scatter(np.eye(2), 5), np.eye(3))


def test_sample_stats_scatter_is_psd(rng):
    X = rng.standard_normal((8, 5))
    S = SampleStats.from_data(X).scatter
    assert np.allclose(S, S.T)
    assert np.linalg.eigvalsh(S).min() > -1e-12
