import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from blockprec.model import (
    EstimationFailedError,
    Partition,
    PenaltyConfig,
    SingularityError,
    UnsupportedConfigError,
    entry_penalties,
    estimate_logz_is,
    exact_logz_2d,
    laplace_block_logz,
    log_bound,
    log_bound_gl1,
    log_bound_gl12,
    logdens_gl1,
    logdens_gl12,
    sample_wishart,
    wishart_logpdf,
)
from conftest import random_pd

# (8 pi sqrt(3) - 18) / 27 evaluated with mpmath at 30 digits
SAME_GROUP_Z = 0.94559943487486031


def exact_2d_by_quadrature(l1, l0):
    """Z for D=2, lambda_d = lambda_1 and off-diagonal rate l0.

    Integrating out x11, x22 > 0 with x11 x22 > t^2 gives a 1-D integral over
    the off-diagonal value; we integrate numerically along the hyperbola.
    """

    def inner(t):
        # int_{x>0, y>t^2/x} exp(-l1 (x + y)) = int_0^inf exp(-l1 x - l1 t^2 / x) / l1 dx
        a = abs(t)
        if a == 0.0:
            return 1.0 / l1**2
        f = lambda x: math.exp(-l1 * x - l1 * a * a / x) / l1
        return integrate.quad(f, 0.0, math.inf, limit=200)[0]

    val, _ = integrate.quad(lambda t: inner(t) * math.exp(-l0 * abs(t)), 0.0, math.inf, limit=200)
    return 2.0 * val


class TestPartition:
    def test_counts(self):
        p = Partition.from_labels([3, 3, 7, 7, 7])
        assert p.K == 2
        assert p.sizes.tolist() == [2, 3]
        assert p.c_t == 1 + 3
        assert p.c_kl[0, 1] == 6 and p.c_kl[0, 0] == 0

    def test_rejects_gaps(self):
        with pytest.raises(ValueError):
            Partition((0, 2))

    def test_one_based_roundtrip(self):
        p = Partition.from_labels([1, 1, 2])
        assert p.to_list() == [1, 1, 2]
        assert p.to_list(one_based=False) == [0, 0, 1]


class TestPenaltyConfig:
    def test_positive(self):
        with pytest.raises(ValueError):
            PenaltyConfig(0.0, 1.0, 2.0)

    def test_grid_constraint(self):
        assert PenaltyConfig(1.0, 2.0, 3.0).grid_admissible
        assert not PenaltyConfig(5.0, 2.0, 3.0).grid_admissible
        assert not PenaltyConfig(1.0, 2.0, 2.0).ordered


class TestEntryPenalties:
    def test_same_and_different(self):
        c = PenaltyConfig(0.1, 0.1, 1.0)
        assert np.allclose(entry_penalties(Partition.single(2), c), [[0.1, 0.1], [0.1, 0.1]])
        assert np.allclose(entry_penalties(Partition.singletons(2), c), [[0.1, 1.0], [1.0, 0.1]])

    def test_two_blocks(self):
        lam = entry_penalties(Partition((0, 0, 1, 1)), PenaltyConfig(0.1, 0.2, 1.0))
        assert lam[0, 1] == lam[2, 3] == 0.2
        assert lam[0, 2] == lam[1, 3] == lam[0, 3] == lam[1, 2] == 1.0


class TestDensities:
    c = PenaltyConfig(0.1, 0.1, 1.0)

    def test_identity(self):
        for p in (Partition.single(3), Partition((0, 1, 1))):
            assert logdens_gl1(np.eye(3), p, self.c) == pytest.approx(-0.3)
            assert logdens_gl12(np.eye(3), p, self.c) == pytest.approx(-0.3)

    def test_indefinite(self):
        X = [[1.0, 2.0], [2.0, 1.0]]
        assert logdens_gl1(X, Partition.single(2), self.c) == -math.inf
        assert logdens_gl12(X, Partition.single(2), self.c) == -math.inf

    def test_arithmetic(self):
        X = [[1.0, 0.5], [0.5, 1.0]]
        p = Partition((0, 1))
        assert logdens_gl1(X, p, self.c) == pytest.approx(-0.7)
        assert logdens_gl12(X, p, self.c) == pytest.approx(-0.7)

    def test_block_norm(self, rng):
        X = random_pd(rng, 4)
        p = Partition((0, 0, 1, 1))
        c = PenaltyConfig(0.3, 0.5, 2.0)
        blk = X[:2, 2:]
        ref = (
            -0.3 * np.trace(X)
            - 0.5 * (abs(X[0, 1]) + abs(X[2, 3]))
            - 2.0 * 4 * math.sqrt(np.sum(blk**2))
        )
        assert logdens_gl12(X, p, c) == pytest.approx(ref, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            logdens_gl1(np.eye(3), Partition.single(2), self.c)

    @given(st.integers(0, 2**32 - 1), st.sampled_from(["single", "singletons"]))
    def test_gl1_gl12_coincide(self, seed, which):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 7))
        X = random_pd(rng, d)
        p = Partition.single(d) if which == "single" else Partition.singletons(d)
        c = PenaltyConfig(*rng.uniform(0.1, 3.0, 3))
        assert logdens_gl12(X, p, c) == pytest.approx(logdens_gl1(X, p, c), rel=1e-12, abs=1e-12)
        assert log_bound_gl12(p, c) == pytest.approx(log_bound_gl1(p, c), abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_relabel_and_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 7))
        X = random_pd(rng, d)
        labels = rng.integers(0, 3, size=d)
        p = Partition.from_labels(labels)
        c = PenaltyConfig(*rng.uniform(0.1, 3.0, 3))
        relabelled = Partition.from_labels([(v + 1) % 3 for v in labels])
        perm = rng.permutation(d)
        pp = Partition.from_labels(labels[perm])
        Xp = X[np.ix_(perm, perm)]
        for f in (logdens_gl1, logdens_gl12):
            base = f(X, p, c)
            assert f(X, relabelled, c) == pytest.approx(base, rel=1e-12)
            assert f(Xp, pp, c) == pytest.approx(base, rel=1e-12)


class TestBounds:
    def test_2d_same_group(self):
        c = PenaltyConfig(1.0, 1.0, 2.0)
        assert log_bound_gl1(Partition.single(2), c) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_1d(self):
        assert log_bound_gl1(Partition.single(1), PenaltyConfig(0.3, 1.0, 2.0)) == pytest.approx(-math.log(0.3))

    def test_singletons_d4(self):
        c = PenaltyConfig(0.1, 0.1, 1.0)
        assert log_bound_gl1(Partition.singletons(4), c) == pytest.approx(math.log(640000.0), rel=1e-14)

    def test_gl12_single_group(self):
        p, c = Partition.single(4), PenaltyConfig(0.2, 0.7, 2.0)
        assert log_bound_gl12(p, c) == pytest.approx(-4 * math.log(0.2) + 6 * (math.log(2) - math.log(0.7)))

    def test_block_term_c2_closed_form(self):
        lam0 = 1.7
        assert laplace_block_logz(2, 2 * lam0) == pytest.approx(math.log(math.pi / (2 * lam0**2)), rel=1e-14)

    @pytest.mark.parametrize("C", [1, 2, 3, 4])
    def test_block_term_radial_quadrature(self, C):
        rate = 1.3 * C
        # surface area of S^{C-1} times the radial integral
        area = 2 * math.pi ** (C / 2) / math.gamma(C / 2)
        radial = integrate.quad(lambda r: r ** (C - 1) * math.exp(-rate * r), 0, math.inf)[0]
        assert math.exp(laplace_block_logz(C, rate)) == pytest.approx(area * radial, rel=1e-6)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            log_bound(Partition.single(2), PenaltyConfig(1, 1, 2), "gl3")


class TestExact2D:
    def test_same_group_value(self):
        assert exact_logz_2d(PenaltyConfig(1.0, 1.0, 2.0), True) == pytest.approx(math.log(SAME_GROUP_Z), abs=1e-12)
        assert exact_logz_2d(PenaltyConfig(1.0, 1.0, 2.0), True) == pytest.approx(-0.055938, abs=1e-5)

    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
    def test_gap_constant(self, lam):
        c = PenaltyConfig(lam, lam, 2 * lam)
        gap = log_bound_gl1(Partition.single(2), c) - exact_logz_2d(c, True)
        assert gap == pytest.approx(0.7491, abs=5e-4)
        assert math.exp(gap) == pytest.approx(2.1150, abs=2e-3)

    def test_equal_rates_consistency(self):
        c = PenaltyConfig(1.0, 1.0, 1.0)
        assert exact_logz_2d(c, False) == pytest.approx(exact_logz_2d(c, True), rel=1e-12)

    @pytest.mark.parametrize("l0", [0.3, 1.0, 1.5, 1.9, 2.1, 3.0, 8.0])
    def test_against_quadrature(self, l0):
        c = PenaltyConfig(1.0, 1.0, l0)
        assert math.exp(exact_logz_2d(c, False)) == pytest.approx(exact_2d_by_quadrature(1.0, l0), rel=1e-7)

    def test_scaling(self):
        # Z(a lambda) = Z(lambda) / a^3 for the three-dimensional integral
        c1 = PenaltyConfig(1.0, 1.0, 1.4)
        c2 = PenaltyConfig(3.0, 3.0, 4.2)
        assert exact_logz_2d(c2, False) == pytest.approx(exact_logz_2d(c1, False) - 3 * math.log(3.0), abs=1e-12)

    def test_errors(self):
        with pytest.raises(SingularityError):
            exact_logz_2d(PenaltyConfig(1.0, 1.0, 2.0), False)
        with pytest.raises(UnsupportedConfigError):
            exact_logz_2d(PenaltyConfig(0.5, 1.0, 1.5), True)

    def test_gap_decreasing_in_ratio(self):
        gaps = []
        for r in (1.1, 1.5, 2.5, 4.0, 8.0):
            c = PenaltyConfig(1.0, 1.0, r)
            gaps.append(log_bound_gl1(Partition.singletons(2), c) - exact_logz_2d(c, False))
        assert np.all(np.diff(gaps) < 0)
        assert min(gaps) > 0


class TestImportanceSampling:
    def test_wishart_density_normalized_1d(self):
        # Wishart(1, dof) in one dimension is chi-square(dof)
        from scipy import stats

        x = np.array([0.3, 1.0, 4.0]).reshape(3, 1, 1)
        assert np.allclose(wishart_logpdf(x, 3.0), stats.chi2(3).logpdf(x.ravel()))

    def test_wishart_moments(self, rng):
        X = sample_wishart(4.0, 3, 40000, rng)
        assert np.allclose(X.mean(axis=0), 4.0 * np.eye(3), atol=0.08)

    def test_same_group_2d(self):
        c = PenaltyConfig(1.0, 1.0, 2.0)
        est, se = estimate_logz_is(Partition.single(2), c, n_samples=100_000, seed=1)
        assert abs(est - exact_logz_2d(c, True)) <= 3 * se
        assert se < 0.01

    def test_deterministic_for_seed(self):
        c = PenaltyConfig(1.0, 1.0, 2.0)
        a = estimate_logz_is(Partition.single(2), c, n_samples=2000, seed=5)
        b = estimate_logz_is(Partition.single(2), c, n_samples=2000, seed=5)
        assert a == b

    def test_min_samples(self):
        with pytest.raises(ValueError):
            estimate_logz_is(Partition.single(2), PenaltyConfig(1, 1, 2), n_samples=10)

    def test_no_finite_weights(self, monkeypatch):
        import blockprec.model as model

        monkeypatch.setattr(model, "_gl1_batch", lambda X, lam: np.full(X.shape[0], -np.inf))
        with pytest.raises(EstimationFailedError):
            estimate_logz_is(Partition.single(2), PenaltyConfig(1, 1, 2), n_samples=1000)

    @given(st.integers(0, 2**31 - 1))
    def test_bound_dominates_estimate(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 5))
        p = Partition.from_labels(rng.integers(0, 2, size=d))
        l1 = rng.uniform(0.5, 2.0)
        c = PenaltyConfig(rng.uniform(0.5, 2.0), l1, l1 * rng.uniform(1.05, 3.0))
        for kind in ("gl1", "gl12"):
            est, se = estimate_logz_is(p, c, kind, n_samples=5000, seed=seed)
            assert log_bound(p, c, kind) >= est - 3 * se
