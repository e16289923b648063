import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize

from blockprec.model import Partition, PenaltyConfig, entry_penalties
from blockprec.pdcore import is_pd
from blockprec.solver import (
    ConvergenceError,
    SolverOptions,
    duality_gap,
    fit_gl12,
    fit_l1,
    gl12_spec,
    kkt_residual,
    l1_spec,
    objective,
    partial_refit,
    solve_dual,
    tikhonov,
)
from conftest import random_pd


def random_cov(rng, d, n=None):
    n = n or 3 * d
    X = rng.standard_normal((n, d)) @ rng.standard_normal((d, d))
    return np.atleast_2d(np.cov(X, rowvar=False, bias=True))


class TestTikhonov:
    def test_examples(self):
        assert np.allclose(tikhonov(np.eye(3), 0.5), np.eye(3) / 1.5)
        assert np.allclose(tikhonov(np.zeros((2, 2)), 1.0), np.eye(2))
        assert np.allclose(tikhonov(np.diag([1.0, 3.0]), 1.0), np.diag([0.5, 0.25]))

    def test_singular_without_ridge(self):
        with pytest.raises(ValueError):
            tikhonov(np.zeros((2, 2)), 0.0)


class TestFitL1:
    def test_two_by_two_example(self):
        # the dual optimum pushes W_12 as far from 0 as the box allows: 0.5 - 0.2
        S = np.array([[1.0, 0.5], [0.5, 1.0]])
        lam = np.array([[0.0, 0.2], [0.2, 0.0]])
        om = fit_l1(S, lam)
        assert np.allclose(np.linalg.inv(om), [[1.0, 0.3], [0.3, 1.0]], atol=1e-7)
        assert np.allclose(om, [[1.0989011, -0.3296703], [-0.3296703, 1.0989011]], atol=1e-6)

    def test_two_by_two_brute_force(self):
        # 1-D brute force over W_12 of the dual for a random 2x2 instance
        S = np.array([[2.0, -0.7], [-0.7, 1.5]])
        b = 0.25
        w12 = optimize.minimize_scalar(
            lambda w: -np.log(S[0, 0] * S[1, 1] - w * w), bounds=(S[0, 1] - b, S[0, 1] + b), method="bounded",
            options={"xatol": 1e-12},
        ).x
        om = fit_l1(S, np.array([[0.0, b], [b, 0.0]]))
        assert np.allclose(np.linalg.inv(om)[0, 1], w12, atol=1e-7)

    @given(st.integers(0, 2**32 - 1))
    def test_diagonal_penalty_is_tikhonov(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 21))
        S = random_cov(rng, d)
        lam = rng.uniform(0.05, 2.0)
        om = fit_l1(S, lam * np.eye(d))
        assert np.max(np.abs(om - tikhonov(S, lam))) <= 1e-6

    def test_huge_penalty_gives_diagonal(self, rng):
        S = random_cov(rng, 6)
        lam = np.full((6, 6), 1e3 * np.abs(S).max())
        np.fill_diagonal(lam, 0.1)
        om = fit_l1(S, lam)
        off = om - np.diag(np.diag(om))
        assert np.abs(off).max() < 1e-8

    def test_optimality_certificates(self, rng):
        for _ in range(5):
            S = random_cov(rng, 20)
            lam = rng.uniform(0.05, 0.3, (20, 20))
            lam = (lam + lam.T) / 2
            res = solve_dual(S, l1_spec(lam))
            assert res.converged
            assert res.gap <= 1e-6
            assert kkt_residual(res.omega, S, "gl1", penalties=lam) <= 1e-5
            assert is_pd(res.omega)

    def test_posterior_scale(self, rng):
        # with n given, the estimate maximizes (n/2)(logdet - tr) - prior
        S = random_cov(rng, 4)
        lam = np.full((4, 4), 3.0)
        n = 40
        om = fit_l1(S, lam, n=n)

        def post(O):
            sign, ld = np.linalg.slogdet(O)
            iu = np.triu_indices(4, 1)
            return 0.5 * n * (ld - np.sum(O * S)) - 3.0 * (np.abs(np.diag(O)).sum() + np.abs(O[iu]).sum())

        base = post(om)
        for _ in range(30):
            E = rng.standard_normal((4, 4)) * 1e-4
            assert post(om + E + E.T) <= base + 1e-12

    def test_kkt_roundoff_floor_terminates(self, rng):
        # an unreachable KKT tolerance must not spin once the gap is certified
        S = random_cov(rng, 12)
        lam = np.full((12, 12), 0.1)
        res = solve_dual(S, l1_spec(lam), SolverOptions(kkt_tol=1e-15, max_iter=5000))
        assert res.converged and res.gap <= 1e-6 and res.n_iter < 5000

    def test_iteration_cap(self, rng):
        S = random_cov(rng, 10)
        with pytest.raises(ConvergenceError) as info:
            fit_l1(S, np.full((10, 10), 0.1), opts=SolverOptions(max_iter=1, tol=1e-14))
        assert info.value.omega is not None and np.isfinite(info.value.gap)


class TestFitGL12:
    def test_single_group_equals_l1(self, rng):
        S = random_cov(rng, 5)
        p, c = Partition.single(5), PenaltyConfig(0.2, 0.1, 0.5)
        assert np.allclose(fit_gl12(S, p, c), fit_l1(S, entry_penalties(p, c)), atol=1e-6)

    def test_singletons_equal_l1(self, rng):
        # singleton blocks have C_kl = 1 and one entry, so l2 collapses to l1
        S = random_cov(rng, 4)
        p, c = Partition.singletons(4), PenaltyConfig(0.2, 0.1, 0.15)
        assert np.allclose(fit_gl12(S, p, c), fit_l1(S, entry_penalties(p, c)), atol=1e-6)

    def test_optimality_certificates(self, rng):
        for _ in range(5):
            S = random_cov(rng, 20)
            p = Partition.from_labels(rng.integers(0, 4, 20))
            c = PenaltyConfig(0.1, 0.05, 0.02)
            spec = gl12_spec(p, c)
            res = solve_dual(S, spec)
            assert res.gap <= 1e-6
            assert kkt_residual(res.omega, S, "gl12", partition=p, config=c) <= 1e-5

    def test_blocks_zeroed_under_strong_penalty(self, rng):
        S = random_cov(rng, 6)
        p = Partition((0, 0, 0, 1, 1, 1))
        om = fit_gl12(S, p, PenaltyConfig(0.1, 0.05, 100.0))
        assert np.abs(om[:3, 3:]).max() < 1e-10


class TestPartialRefit:
    def test_all_rows_matches_full_fit(self, rng):
        S = random_cov(rng, 6)
        lam = np.full((6, 6), 0.1)
        spec = l1_spec(lam)
        om = partial_refit(np.eye(6), S, range(6), spec, SolverOptions(tol=1e-10, max_iter=20000))
        assert np.allclose(om, fit_l1(S, lam), atol=1e-5)

    def test_only_free_entries_move_and_objective_rises(self, rng):
        S = random_cov(rng, 7)
        p = Partition((0, 0, 0, 1, 1, 2, 2))
        spec = gl12_spec(p, PenaltyConfig(0.1, 0.05, 0.05))
        start = np.diag(1.0 / np.diag(S))
        om = partial_refit(start, S, [0, 1, 2], spec)
        fixed = np.ones((7, 7), dtype=bool)
        fixed[:3, :] = fixed[:, :3] = False
        assert np.array_equal(om[fixed], start[fixed])
        assert objective(om, S, spec) >= objective(start, S, spec)
        assert is_pd(om)


def test_duality_gap_nonnegative(rng):
    S = random_cov(rng, 5)
    spec = l1_spec(np.full((5, 5), 0.2))
    for _ in range(10):
        assert duality_gap(random_pd(rng, 5), S, spec) >= -1e-10
