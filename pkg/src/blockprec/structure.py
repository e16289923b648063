"""Block-structure learning by maximizing a lower bound on the log posterior.

The hierarchical model is a Gaussian likelihood, a group l1 (or l1,2) prior on
the precision matrix given group labels, categorical labels with proportions
theta and a symmetric Dirichlet prior on theta.  The intractable prior
normalizer is replaced by its closed-form upper bound, theta is integrated
against a Dirichlet q(theta | alpha), and (group l1 only) labels get a factorized
q(z_i = k) = phi_ik.  Structure is grown from a single group by normalized-cut
split proposals.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import (
    Partition,
    PenaltyConfig,
    entry_penalties,
    log_bound_gl12,
    logdens_gl12,
)
from .pdcore import SampleStats, cholesky_logdet, digamma, gaussian_loglik, log_gamma
from .solver import (
    ConvergenceError,
    SolverOptions,
    gl12_spec,
    l1_spec,
    partial_refit,
    solve_dual,
)

log = logging.getLogger(__name__)

LOG2 = math.log(2.0)


@dataclass
class VariationalState:
    """Dirichlet parameters plus either soft (phi) or hard (z) assignments."""

    alpha: np.ndarray
    phi: np.ndarray | None = None
    z: Partition | None = None

    @property
    def K(self) -> int:
        return int(self.alpha.size)

    def hard(self) -> Partition:
        """MAP labels (phi argmax, ties to the lowest group), compacted."""
        if self.z is not None:
            return self.z
        return Partition.from_labels(np.argmax(self.phi, axis=1))

    def copy(self) -> "VariationalState":
        return VariationalState(
            self.alpha.copy(),
            None if self.phi is None else self.phi.copy(),
            self.z,
        )


@dataclass
class SearchOptions:
    kind: str = "gl1"
    method: str = "greedy"  # or "exhaustive"
    prior_term: str = "alpha0_over_k"  # or "alpha0"
    max_cycles: int = 100
    cycle_tol: float = 1e-6
    max_splits: int | None = None
    min_gain: float = 1e-9
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.kind not in ("gl1", "gl12"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.method not in ("greedy", "exhaustive"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.prior_term not in ("alpha0_over_k", "alpha0"):
            raise ValueError(f"unknown prior term {self.prior_term!r}")


@dataclass
class SearchReport:
    bound_trajectory: list
    final_partition: Partition
    final_omega: np.ndarray
    final_state: VariationalState
    termination: str
    kind: str
    method: str
    prior_term: str
    timing: dict = field(default_factory=dict)

    @property
    def final_bound(self) -> float:
        return self.bound_trajectory[-1]["bound"]

    def to_dict(self) -> dict:
        st = self.final_state
        return {
            "kind": self.kind,
            "method": self.method,
            "prior_term": self.prior_term,
            "termination": self.termination,
            "bound_trajectory": self.bound_trajectory,
            "final_bound": self.final_bound,
            "final_partition": self.final_partition.to_list(),
            "n_groups": self.final_partition.K,
            "alpha": st.alpha.tolist(),
            "phi": None if st.phi is None else st.phi.tolist(),
            "timing": self.timing,
        }


# --- bound pieces ----------------------------------------------------------


def prior_concentration(c: PenaltyConfig, K: int, prior_term: str = "alpha0_over_k") -> float:
    return c.alpha_0 / K if prior_term == "alpha0_over_k" else c.alpha_0


def _expected_log_theta(alpha: np.ndarray) -> np.ndarray:
    return digamma(alpha) - digamma(alpha.sum())


def dirichlet_terms(alpha: np.ndarray, a: float) -> float:
    """E_q[log p(theta)] - E_q[log q(theta)] for a symmetric Dir(a) prior."""
    K = alpha.size
    elt = _expected_log_theta(alpha)
    prior = log_gamma(K * a) - K * log_gamma(a) + (a - 1.0) * elt.sum()
    entropy_part = log_gamma(alpha.sum()) - np.sum(log_gamma(alpha)) + np.sum((alpha - 1.0) * elt)
    return float(prior - entropy_part)


def _safe_loglik(stats: SampleStats, omega) -> float:
    _, ok = cholesky_logdet(omega)
    if not ok:
        return -math.inf
    return gaussian_loglik(stats, omega)


def _pair_terms(omega: np.ndarray, c: PenaltyConfig):
    a = np.abs(omega)
    a1 = math.log(c.lambda_1) - c.lambda_1 * a
    a0 = math.log(c.lambda_0) - c.lambda_0 * a
    return a1, a0


def elbo_gl1(omega, state: VariationalState, stats: SampleStats, c: PenaltyConfig,
             prior_term: str = "alpha0_over_k") -> float:
    """Lower bound on the log posterior of omega under the group l1 prior."""
    omega = np.asarray(omega, dtype=float)
    ll = _safe_loglik(stats, omega)
    if not math.isfinite(ll):
        return -math.inf
    phi, alpha = state.phi, state.alpha
    d = omega.shape[0]
    diag = np.diag(omega)
    val = ll + float(np.sum(-c.lambda_d * np.abs(diag) + math.log(c.lambda_d)))
    e = phi @ phi.T
    a1, a0 = _pair_terms(omega, c)
    iu = np.triu_indices(d, 1)
    val += float(np.sum(-LOG2 + e[iu] * a1[iu] + (1.0 - e[iu]) * a0[iu]))
    elt = _expected_log_theta(alpha)
    val += float(np.sum(phi @ elt))
    val += dirichlet_terms(alpha, prior_concentration(c, alpha.size, prior_term))
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(phi > 0, phi * np.log(phi), 0.0)
    val -= float(np.sum(ent))
    return val


def objective_gl12(omega, z: Partition, alpha: np.ndarray, stats: SampleStats,
                   c: PenaltyConfig, prior_term: str = "alpha0_over_k") -> float:
    """Bound on the log posterior under the group l1,2 prior with hard labels."""
    ll = _safe_loglik(stats, omega)
    if not math.isfinite(ll):
        return -math.inf
    return ll + _gl12_label_terms(omega, z, alpha, c, prior_term)


def _gl12_label_terms(omega, z: Partition, alpha, c, prior_term) -> float:
    elt = _expected_log_theta(alpha)
    return (
        logdens_gl12(omega, z, c)
        - log_bound_gl12(z, c)
        + float(np.sum(elt[z.z]))
        + dirichlet_terms(alpha, prior_concentration(c, alpha.size, prior_term))
    )


def bound_value(kind, omega, state, stats, c, prior_term="alpha0_over_k") -> float:
    if kind == "gl1":
        return elbo_gl1(omega, state, stats, c, prior_term)
    return objective_gl12(omega, state.z, state.alpha, stats, c, prior_term)


# --- coordinate updates ----------------------------------------------------------


def update_alpha(counts, c: PenaltyConfig, prior_term: str = "alpha0_over_k") -> np.ndarray:
    """Closed-form Dirichlet update: prior concentration plus expected counts.

    ``counts`` is either a D x K responsibility matrix or a Partition.
    """
    if isinstance(counts, Partition):
        n_k = counts.sizes.astype(float)
    else:
        n_k = np.asarray(counts, dtype=float).sum(axis=0)
    return prior_concentration(c, n_k.size, prior_term) + n_k


def update_phi(state: VariationalState, omega, c: PenaltyConfig, rows=None) -> np.ndarray:
    """Sequential closed-form coordinate ascent over the rows of phi.

    Row ``i`` is set to the exact maximizer of :func:`elbo_gl1` with every
    other row and alpha held fixed::

        phi_ik  propto  exp(E[log theta_k] + sum_{j != i} phi_jk (a1_ij - a0_ij))

    where ``a1 = log lambda_1 - lambda_1 |omega|`` and
    ``a0 = log lambda_0 - lambda_0 |omega|``.  ``rows`` restricts the pass.
    """
    omega = np.asarray(omega, dtype=float)
    phi = state.phi.copy()
    elt = _expected_log_theta(state.alpha)
    a1, a0 = _pair_terms(omega, c)
    diff = a1 - a0
    np.fill_diagonal(diff, 0.0)
    for i in range(phi.shape[0]) if rows is None else rows:
        s = elt + diff[i] @ phi
        s = s - s.max()
        w = np.exp(s)
        phi[i] = w / w.sum()
    return phi


def _compact(z: np.ndarray, alpha: np.ndarray):
    """Drop empty groups; relabel to 0..K'-1 preserving order."""
    used = np.unique(z)
    remap = -np.ones(alpha.size, dtype=int)
    remap[used] = np.arange(used.size)
    return Partition(tuple(remap[z])), alpha[used]


def update_z_local(z: Partition, omega, alpha: np.ndarray, stats: SampleStats,
                   c: PenaltyConfig, prior_term: str = "alpha0_over_k"):
    """One pass of greedy label reassignment for the group l1,2 bound.

    Each variable moves to the group maximizing the bound (ties keep the
    current label).  Groups that empty out are removed together with their
    Dirichlet parameter.  Returns ``(partition, alpha)``.
    """
    omega = np.asarray(omega, dtype=float)
    labels = z.z.copy()
    alpha = np.asarray(alpha, dtype=float).copy()
    for i in range(labels.size):
        cur_p, cur_a = _compact(labels, alpha)
        best = _gl12_label_terms(omega, cur_p, cur_a, c, prior_term)
        best_k = labels[i]
        for k in range(alpha.size):
            if k == labels[i]:
                continue
            trial = labels.copy()
            trial[i] = k
            p_t, a_t = _compact(trial, alpha)
            v = _gl12_label_terms(omega, p_t, a_t, c, prior_term)
            if v > best:
                best, best_k = v, k
        labels[i] = best_k
    return _compact(labels, alpha)


# --- split proposals -----------------------------------------------------------


def split_affinity(p: Partition, k: int, omega) -> np.ndarray:
    """|O(U,U)| + 0.5 |O(U,Ubar)| |O(U,Ubar)|^T with the diagonal removed."""
    omega = np.abs(np.asarray(omega, dtype=float))
    U = p.members(k)
    Ubar = np.flatnonzero(p.z != k)
    W = omega[np.ix_(U, U)].copy()
    if Ubar.size:
        B = omega[np.ix_(U, Ubar)]
        W = W + 0.5 * B @ B.T
    np.fill_diagonal(W, 0.0)
    return W


def normalized_cut(W: np.ndarray, mask: np.ndarray) -> float:
    deg = W.sum(axis=1)
    cut = float(W[np.ix_(mask, ~mask)].sum())
    va, vb = float(deg[mask].sum()), float(deg[~mask].sum())
    if cut == 0.0:
        return 0.0
    return cut / va + cut / vb


def spectral_bipartition(W: np.ndarray):
    """Sweep cut over the Fiedler vector of the normalized Laplacian.

    Returns (mask, ncut) where ``mask`` selects one side.  Zero-degree nodes
    are set aside and joined to the smaller side afterwards.
    """
    n = W.shape[0]
    deg = W.sum(axis=1)
    core = np.flatnonzero(deg > 0)
    mask = np.zeros(n, dtype=bool)
    if core.size < 2:
        mask[0] = True
        return mask, 0.0
    Wc = W[np.ix_(core, core)]
    dc = deg[core]
    dinv = 1.0 / np.sqrt(dc)
    L = np.eye(core.size) - dinv[:, None] * Wc * dinv[None, :]
    _, vecs = np.linalg.eigh(0.5 * (L + L.T))
    y = vecs[:, 1] * dinv
    order = np.lexsort((core, y))
    best_val, best_m = math.inf, 1
    for m in range(1, core.size):
        sub = np.zeros(core.size, dtype=bool)
        sub[order[:m]] = True
        val = normalized_cut(Wc, sub)
        if val < best_val - 1e-15:
            best_val, best_m = val, m
    sub = np.zeros(core.size, dtype=bool)
    sub[order[:best_m]] = True
    mask[core[sub]] = True
    isolated = np.flatnonzero(deg <= 0)
    if isolated.size:
        smaller = mask.sum() <= (~mask[core]).sum()
        mask[isolated] = smaller
    return mask, float(best_val)


def propose_split(p: Partition, k: int, omega):
    """Normalized-cut split of group ``k``: returns (part_a, part_b, ncut).

    ``part_a`` is the side containing the lowest-indexed member.
    """
    U = p.members(k)
    if U.size < 2:
        raise ValueError(f"group {k} has {U.size} member(s); cannot split")
    if U.size == 2:
        W = split_affinity(p, k, omega)
        mask = np.array([True, False])
        return U[:1], U[1:], normalized_cut(W, mask)
    W = split_affinity(p, k, omega)
    mask, val = spectral_bipartition(W)
    if not mask[0]:
        mask = ~mask
    return U[mask], U[~mask], val


def apply_split(p: Partition, k: int, part_b) -> Partition:
    z = p.z.copy()
    z[np.asarray(part_b, dtype=int)] = p.K
    return Partition(tuple(z))


# --- model fitting ---------------------------------------------------------------


@dataclass
class _Fit:
    omega: np.ndarray
    W: np.ndarray | None
    state: VariationalState
    bound: float


class _Engine:
    def __init__(self, stats: SampleStats, c: PenaltyConfig, opts: SearchOptions):
        self.stats, self.c, self.opts = stats, c, opts
        self.kind = opts.kind
        self.n_solves = 0

    def bound(self, omega, state) -> float:
        return bound_value(self.kind, omega, state, self.stats, self.c, self.opts.prior_term)

    def spec_for(self, state):
        n = self.stats.n
        if self.kind == "gl1":
            e = state.phi @ state.phi.T
            lam = e * self.c.lambda_1 + (1.0 - e) * self.c.lambda_0
            np.fill_diagonal(lam, self.c.lambda_d)
            return l1_spec(lam, n)
        return gl12_spec(state.z, self.c, n)

    def refit_omega(self, fit: _Fit) -> _Fit:
        self.n_solves += 1
        try:
            res = solve_dual(self.stats.scatter, self.spec_for(fit.state), self.opts.solver, fit.W)
            omega, W = res.omega, res.W
        except ConvergenceError as err:
            log.warning("precision update did not converge: %s", err)
            omega, W = err.omega, None
        b = self.bound(omega, fit.state)
        if b >= fit.bound:
            return _Fit(omega, W, fit.state, b)
        return fit

    def update_labels(self, fit: _Fit) -> _Fit:
        st = fit.state.copy()
        c, pt = self.c, self.opts.prior_term
        if self.kind == "gl1":
            st.alpha = update_alpha(st.phi, c, pt)
            st.phi = update_phi(st, fit.omega, c)
            st.alpha = update_alpha(st.phi, c, pt)
        else:
            st.alpha = update_alpha(st.z, c, pt)
            z, alpha = update_z_local(st.z, fit.omega, st.alpha, self.stats, c, pt)
            st.z = z
            st.alpha = update_alpha(z, c, pt)
        b = self.bound(fit.omega, st)
        if b >= fit.bound:
            return _Fit(fit.omega, fit.W, st, b)
        return fit

    def converge(self, fit: _Fit) -> _Fit:
        for _ in range(self.opts.max_cycles):
            prev = fit.bound
            fit = self.refit_omega(fit)
            fit = self.update_labels(fit)
            if abs(fit.bound - prev) <= self.opts.cycle_tol * max(1.0, abs(fit.bound)):
                break
        return fit

    def state_for(self, p: Partition) -> VariationalState:
        alpha = update_alpha(p, self.c, self.opts.prior_term)
        if self.kind == "gl1":
            phi = np.zeros((p.D, p.K))
            phi[np.arange(p.D), p.z] = 1.0
            return VariationalState(alpha, phi=phi)
        return VariationalState(alpha, z=p)

    def initial(self) -> _Fit:
        d = self.stats.dim
        state = self.state_for(Partition.single(d))
        res = solve_dual(self.stats.scatter, self.spec_for(state), self.opts.solver)
        self.n_solves += 1
        fit = _Fit(res.omega, res.W, state, self.bound(res.omega, state))
        return self.converge(fit)

    def candidate(self, fit: _Fit, p_new: Partition) -> _Fit:
        state = self.state_for(p_new)
        return _Fit(fit.omega, fit.W, state, self.bound(fit.omega, state))

    def proposals(self, fit: _Fit):
        p = fit.state.hard()
        out = []
        for k in range(p.K):
            if p.sizes[k] < 2:
                continue
            a, b, ncut = propose_split(p, k, fit.omega)
            out.append((ncut / p.sizes[k], k, a, b, ncut, p))
        out.sort(key=lambda t: (t[0], t[1], tuple(t[3])))
        return out


def _record(step, group, parts, bound, K):
    return {
        "step": step,
        "group": group,
        "split": None if parts is None else [list(map(int, parts[0])), list(map(int, parts[1]))],
        "bound": float(bound),
        "n_groups": int(K),
    }


def _report(engine, fit, traj, reason, t0):
    st = fit.state
    return SearchReport(
        bound_trajectory=traj,
        final_partition=st.hard(),
        final_omega=fit.omega,
        final_state=st,
        termination=reason,
        kind=engine.kind,
        method=engine.opts.method,
        prior_term=engine.opts.prior_term,
        timing={"seconds": time.perf_counter() - t0, "n_solves": engine.n_solves},
    )


def greedy_search(stats: SampleStats, c: PenaltyConfig, opts: SearchOptions | None = None) -> SearchReport:
    """Split groups in order of cut-per-variable, accepting the first split
    whose fully updated bound exceeds the current one."""
    opts = opts or SearchOptions(method="greedy")
    t0 = time.perf_counter()
    eng = _Engine(stats, c, opts)
    fit = eng.initial()
    traj = [_record(0, None, None, fit.bound, fit.state.K)]
    reason = "no split increases the bound"
    step = 0
    while opts.max_splits is None or step < opts.max_splits:
        accepted = False
        for _, k, a, b, _, p in eng.proposals(fit):
            cand = eng.converge(eng.candidate(fit, apply_split(p, k, b)))
            if cand.bound > fit.bound + opts.min_gain * max(1.0, abs(fit.bound)):
                step += 1
                fit = cand
                traj.append(_record(step, k, (a, b), fit.bound, fit.state.K))
                accepted = True
                break
        if not accepted:
            break
    else:
        reason = "split budget exhausted"
    return _report(eng, fit, traj, reason, t0)


def exhaustive_search(stats: SampleStats, c: PenaltyConfig, opts: SearchOptions | None = None) -> SearchReport:
    """Score every group's split with a partial precision update restricted to
    the splitting group's rows, then fully refit the best one."""
    opts = opts or SearchOptions(method="exhaustive")
    t0 = time.perf_counter()
    eng = _Engine(stats, c, opts)
    fit = eng.initial()
    traj = [_record(0, None, None, fit.bound, fit.state.K)]
    reason = "best split does not increase the bound"
    step = 0
    S = stats.scatter
    while opts.max_splits is None or step < opts.max_splits:
        scored = []
        for _, k, a, b, _, p in eng.proposals(fit):
            cand = eng.candidate(fit, apply_split(p, k, b))
            omega = partial_refit(fit.omega, S, p.members(k), eng.spec_for(cand.state), opts.solver)
            st = cand.state
            val = eng.bound(omega, st)
            scored.append((-val, k, tuple(a), a, b, p, omega))
        if not scored:
            reason = "no splittable group"
            break
        scored.sort(key=lambda t: (t[0], t[1], t[2]))
        _, k, _, a, b, p, omega = scored[0]
        cand = eng.candidate(fit, apply_split(p, k, b))
        cand = _Fit(omega, None, cand.state, eng.bound(omega, cand.state))
        cand = eng.converge(cand)
        if cand.bound > fit.bound + opts.min_gain * max(1.0, abs(fit.bound)):
            step += 1
            fit = cand
            traj.append(_record(step, k, (a, b), fit.bound, fit.state.K))
        else:
            break
    else:
        reason = "split budget exhausted"
    return _report(eng, fit, traj, reason, t0)


def search(stats: SampleStats, c: PenaltyConfig, opts: SearchOptions) -> SearchReport:
    if opts.method == "greedy":
        return greedy_search(stats, c, opts)
    return exhaustive_search(stats, c, opts)


def fit_fixed(stats: SampleStats, p: Partition, c: PenaltyConfig, kind: str = "gl12",
              solver: SolverOptions | None = None) -> np.ndarray:
    """Precision estimate for a known partition on the posterior scale."""
    n = stats.n
    if kind == "gl1":
        spec = l1_spec(entry_penalties(p, c), n)
    else:
        spec = gl12_spec(p, c, n)
    return solve_dual(stats.scatter, spec, solver).omega
