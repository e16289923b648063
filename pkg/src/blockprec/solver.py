"""Penalized Gaussian precision estimation for fixed penalties.

Scale conventions
-----------------
The optimizer works on the objective::

    log det(O) - tr(O S) - sum_ij B_ij |O_ij| - sum_{k != l} r_kl ||O_kl||_2

where the sums run over *both* triangles.  A penalty matrix handed to
:func:`fit_l1` with ``n=None`` is ``B`` itself.  When the sample count ``n``
is given, the penalties are read as prior rates (diagonal once, off-diagonal
entries once in the upper triangle) on the log-posterior scale
``(n/2)(log det O - tr(O S)) - prior``; dividing by ``n/2`` gives
``B_ii = 2 lam_ii / n``, ``B_ij = lam_ij / n`` and ``r_kl = lam_kl / n``.

The dual of the problem is ``max log det W`` subject to
``|W_ij - S_ij| <= B_ij`` and ``||W_kl - S_kl||_2 <= r_kl``, solved here by
spectral projected gradient with a monotone Armijo backtrack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import Partition, PenaltyConfig, entry_penalties
from .pdcore import as_sym, cholesky_logdet


class ConvergenceError(RuntimeError):
    """Iteration cap reached before the duality gap fell below tolerance."""

    def __init__(self, msg, omega=None, gap=math.inf):
        super().__init__(msg)
        self.omega = omega
        self.gap = gap


STALL_ITERS = 20


@dataclass
class SolverOptions:
    tol: float = 1e-6
    kkt_tol: float | None = 1e-6
    max_iter: int = 5000
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-12
    max_step: float = 1e10


@dataclass
class PenaltySpec:
    """Dual feasible set on the Eq.-scale: box bounds plus l2 balls on blocks."""

    box: np.ndarray
    blocks: list = field(default_factory=list)  # (rows, cols, radius), rows/cols disjoint

    def __post_init__(self):
        self.box = as_sym(self.box)
        if np.any(self.box < 0):
            raise ValueError("penalties must be non-negative")
        mask = np.ones_like(self.box, dtype=bool)
        for rows, cols, _ in self.blocks:
            mask[np.ix_(rows, cols)] = False
            mask[np.ix_(cols, rows)] = False
        self.box_mask = mask

    @property
    def dim(self) -> int:
        return self.box.shape[0]

    def penalty(self, omega: np.ndarray) -> float:
        val = float(np.sum(self.box[self.box_mask] * np.abs(omega[self.box_mask])))
        for rows, cols, r in self.blocks:
            val += 2.0 * r * float(np.linalg.norm(omega[np.ix_(rows, cols)]))
        return val

    def project_dual(self, W: np.ndarray, S: np.ndarray) -> np.ndarray:
        R = np.clip(W - S, -self.box, self.box)
        R = np.where(self.box_mask, R, W - S)
        for rows, cols, r in self.blocks:
            blk = R[np.ix_(rows, cols)]
            nrm = np.linalg.norm(blk)
            if nrm > r:
                blk = blk * (r / nrm)
            R[np.ix_(rows, cols)] = blk
            R[np.ix_(cols, rows)] = blk.T
        R = 0.5 * (R + R.T)
        return S + R

    def clean(self, omega: np.ndarray, W: np.ndarray, S: np.ndarray) -> np.ndarray:
        """Zero the entries / blocks whose dual constraint is inactive."""
        R = W - S
        out = omega.copy()
        # W - S loses low bits; constraints within act_tol of the bound count as active
        act_tol = 1e-9 * (1.0 + np.abs(S))
        inactive = self.box_mask & (np.abs(R) < self.box - act_tol)
        np.fill_diagonal(inactive, False)
        out[inactive] = 0.0
        for rows, cols, r in self.blocks:
            if np.linalg.norm(R[np.ix_(rows, cols)]) < r * (1.0 - 1e-9) - 1e-12:
                out[np.ix_(rows, cols)] = 0.0
                out[np.ix_(cols, rows)] = 0.0
        return out

    def kkt(self, omega: np.ndarray, S: np.ndarray) -> float:
        """Largest violation of the stationarity conditions at ``omega``."""
        G = np.linalg.inv(omega) - S
        G = 0.5 * (G + G.T)
        nz = omega != 0.0
        viol = np.where(
            nz,
            np.abs(G - self.box * np.sign(omega)),
            np.maximum(np.abs(G) - self.box, 0.0),
        )
        worst = float(np.max(viol[self.box_mask])) if np.any(self.box_mask) else 0.0
        for rows, cols, r in self.blocks:
            g = G[np.ix_(rows, cols)]
            o = omega[np.ix_(rows, cols)]
            no = np.linalg.norm(o)
            if no == 0.0:
                v = max(np.linalg.norm(g) - r, 0.0)
            else:
                v = float(np.linalg.norm(g - r * o / no))
            worst = max(worst, v)
        return worst

    def prox(self, X: np.ndarray, t: float, free: np.ndarray, fixed_ref: np.ndarray) -> np.ndarray:
        """Prox of ``t * penalty`` restricted to ``free`` entries; others copied from ``fixed_ref``."""
        out = np.where(free, X, fixed_ref)
        bm = self.box_mask & free
        thr = t * self.box
        out[bm] = np.sign(X[bm]) * np.maximum(np.abs(X[bm]) - thr[bm], 0.0)
        for rows, cols, r in self.blocks:
            fb = free[np.ix_(rows, cols)]
            if not np.any(fb):
                continue
            v = X[np.ix_(rows, cols)][fb]
            c = fixed_ref[np.ix_(rows, cols)][~fb]
            x = _group_prox(v, float(np.linalg.norm(c)), t * r)
            blk = fixed_ref[np.ix_(rows, cols)].copy()
            blk[fb] = x
            out[np.ix_(rows, cols)] = blk
            out[np.ix_(cols, rows)] = blk.T
        return out


def _group_prox(v: np.ndarray, cnorm: float, tau: float) -> np.ndarray:
    """argmin_x 0.5 ||x - v||^2 + tau ||(x, c)|| for a fixed remainder of norm ``cnorm``."""
    a = float(np.linalg.norm(v))
    if cnorm == 0.0:
        return v * max(1.0 - tau / a, 0.0) if a > 0 else v * 0.0
    if a == 0.0:
        return v * 0.0

    def f(n):
        return a * a * n * n / (n + tau) ** 2 + cnorm * cnorm - n * n

    hi = math.sqrt(a * a + cnorm * cnorm)
    if f(hi) >= 0.0:
        n = hi
    else:
        n = optimize.brentq(f, cnorm, hi, xtol=1e-15, rtol=1e-15)
    return v * (n / (n + tau))


def l1_spec(penalties, n: int | None = None) -> PenaltySpec:
    lam = as_sym(penalties)
    if n is None:
        return PenaltySpec(lam)
    B = lam / n
    B[np.diag_indices_from(B)] *= 2.0
    return PenaltySpec(B)


def gl12_spec(p: Partition, c: PenaltyConfig, n: int | None = None) -> PenaltySpec:
    lam = entry_penalties(p, c)
    same = p.same_group()
    lam[~same] = 0.0
    blocks = []
    ckl = p.c_kl
    for k in range(p.K):
        for l in range(k + 1, p.K):
            blocks.append((p.members(k), p.members(l), float(c.lambda_0 * ckl[k, l])))
    if n is not None:
        lam = lam / n
        lam[np.diag_indices_from(lam)] *= 2.0
        blocks = [(r, q, rad / n) for r, q, rad in blocks]
    return PenaltySpec(lam, blocks)


def make_spec(kind: str, *, penalties=None, partition=None, config=None, n=None) -> PenaltySpec:
    if kind == "gl1":
        if penalties is None:
            penalties = entry_penalties(partition, config)
        return l1_spec(penalties, n)
    if kind == "gl12":
        return gl12_spec(partition, config, n)
    raise ValueError(f"unknown kind {kind!r}")


def objective(omega, S, spec: PenaltySpec) -> float:
    """log det(O) - tr(O S) - penalty(O) on the Eq.-scale; -inf off the cone."""
    logdet, ok = cholesky_logdet(omega)
    if not ok:
        return -math.inf
    return logdet - float(np.sum(omega * S)) - spec.penalty(omega)


@dataclass
class FitResult:
    omega: np.ndarray
    W: np.ndarray
    gap: float
    n_iter: int
    converged: bool


def tikhonov(S, lam: float) -> np.ndarray:
    """(S + lam I)^-1."""
    S = as_sym(S)
    A = S + lam * np.eye(S.shape[0])
    logdet, ok = cholesky_logdet(A)
    if not ok:
        raise ValueError("S + lam I is not positive definite")
    return as_sym(np.linalg.inv(A))


def _inv_pd(W: np.ndarray):
    try:
        L = np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        return None, -math.inf
    if np.any(np.diag(L) <= 0):
        return None, -math.inf
    Linv = np.linalg.inv(L)
    inv = Linv.T @ Linv
    return 0.5 * (inv + inv.T), 2.0 * float(np.sum(np.log(np.diag(L))))


def solve_dual(S, spec: PenaltySpec, opts: SolverOptions | None = None, w_init=None) -> FitResult:
    """Maximize log det W over the dual feasible set, return the primal estimate."""
    opts = opts or SolverOptions()
    S = as_sym(S)
    d = S.shape[0]

    W = None
    if w_init is not None:
        W = spec.project_dual(as_sym(w_init), S)
        W[np.diag_indices(d)] = np.diag(S) + np.diag(spec.box)
        if _inv_pd(W)[0] is None:
            W = None
    if W is None:
        W = S + np.diag(np.diag(spec.box))
    G, g = _inv_pd(W)
    if G is None:
        raise ValueError("no positive-definite feasible start: S singular and zero diagonal penalty")

    def primal_from(W, G):
        om = spec.clean(G, W, S)
        if om is not G:
            f_clean = objective(om, S, spec)
            f_raw = objective(G, S, spec)
            if not f_clean >= f_raw:
                return G, f_raw
            return om, f_clean
        return G, objective(G, S, spec)

    step = 1.0
    best = None
    stalled = 0
    for it in range(1, opts.max_iter + 1):
        omega, f = primal_from(W, G)
        gap = -g - d - f
        if best is None or gap < best[1]:
            best = (omega, gap, W)
        if gap <= opts.tol and (opts.kkt_tol is None or spec.kkt(omega, S) <= opts.kkt_tol):
            return FitResult(omega, W, gap, it, True)
        if gap <= opts.tol and stalled >= STALL_ITERS:
            # gap certified and the dual value no longer moves: KKT is at its roundoff floor
            return FitResult(omega, W, gap, it, True)

        t = min(max(step, opts.min_step), opts.max_step)
        while True:
            W_new = spec.project_dual(W + t * G, S)
            G_new, g_new = _inv_pd(W_new)
            if G_new is not None and g_new >= g + opts.armijo * float(np.sum(G * (W_new - W))):
                break
            t *= opts.backtrack
            if t < opts.min_step:
                G_new = None
                break
        if G_new is None:
            # no ascent possible at machine precision
            omega, f = primal_from(W, G)
            gap = -g - d - f
            if gap <= 10 * opts.tol:
                return FitResult(omega, W, gap, it, True)
            break
        s = W_new - W
        y = G_new - G
        stalled = stalled + 1 if g_new - g <= 1e-14 * max(1.0, abs(g)) else 0
        sy = -float(np.sum(s * y))
        step = float(np.sum(s * s)) / sy if sy > 0 else opts.max_step
        W, G, g = W_new, G_new, g_new

    omega, gap, W_best = best
    raise ConvergenceError(
        f"dual projected gradient stopped with gap {gap:.3g} > tol {opts.tol:.3g}", omega, gap
    )


def fit_l1(S, penalties, n: int | None = None, opts: SolverOptions | None = None, w_init=None):
    """Elementwise-l1 penalized precision estimate.

    ``penalties`` is a symmetric matrix of non-negative rates; see the module
    docstring for how ``n`` changes their scale.
    """
    return solve_dual(S, l1_spec(penalties, n), opts, w_init).omega


def fit_gl12(S, p: Partition, c: PenaltyConfig, n: int | None = None,
             opts: SolverOptions | None = None, w_init=None):
    """Group l1,2 penalized precision estimate: l1 on the diagonal and within
    groups, l2 on each between-group block with weight ``C_kl * lambda_0``."""
    return solve_dual(S, gl12_spec(p, c, n), opts, w_init).omega


def kkt_residual(omega, S, kind: str = "gl1", *, penalties=None, partition=None,
                 config=None, n=None) -> float:
    spec = make_spec(kind, penalties=penalties, partition=partition, config=config, n=n)
    return spec.kkt(as_sym(omega), as_sym(S))


def duality_gap(omega, S, spec: PenaltySpec) -> float:
    """Gap between the primal value at ``omega`` and the dual value at the
    feasible point obtained by projecting ``omega^-1``."""
    omega = as_sym(omega)
    S = as_sym(S)
    W = spec.project_dual(np.linalg.inv(omega), S)
    logdet_w, ok = cholesky_logdet(W)
    if not ok:
        return math.inf
    return -logdet_w - S.shape[0] - objective(omega, S, spec)


def partial_refit(omega, S, rows, spec: PenaltySpec, opts: SolverOptions | None = None) -> np.ndarray:
    """Re-optimize only the entries with at least one index in ``rows``.

    Proximal gradient in the primal with a monotone backtracking line search,
    so the objective never decreases and the iterate stays PD.
    """
    opts = opts or SolverOptions()
    omega = as_sym(omega)
    S = as_sym(S)
    d = S.shape[0]
    rows = np.asarray(sorted(set(int(r) for r in rows)), dtype=int)
    if rows.size == 0:
        return omega.copy()
    sel = np.zeros(d, dtype=bool)
    sel[rows] = True
    free = sel[:, None] | sel[None, :]

    def smooth(O, logdet):
        return -logdet + float(np.sum(O * S))

    inv, logdet = _inv_pd(omega)
    if inv is None:
        raise ValueError("starting precision is not positive definite")
    O = omega
    sm = smooth(O, logdet)
    cur = sm + spec.penalty(O)
    t = 1.0
    for it in range(opts.max_iter):
        grad = np.where(free, S - inv, 0.0)
        while True:
            cand = spec.prox(O - t * grad, t, free, O)
            delta = cand - O
            inv_c, logdet_c = _inv_pd(cand)
            if inv_c is not None:
                sm_c = smooth(cand, logdet_c)
                bound = sm + float(np.sum(grad * delta)) + float(np.sum(delta * delta)) / (2 * t)
                if sm_c <= bound + 1e-15 * abs(sm):
                    break
            t *= opts.backtrack
            if t < opts.min_step:
                return O
        hc = sm_c + spec.penalty(cand)
        if hc > cur:
            return O
        step_norm = float(np.max(np.abs(delta))) / t
        s, y = delta, np.where(free, inv - inv_c, 0.0)
        O, inv, sm, prev, cur = cand, inv_c, sm_c, cur, hc
        if step_norm <= opts.tol * 1e-2 or prev - cur <= 1e-15 * max(1.0, abs(cur)):
            break
        sy = float(np.sum(s * y))
        t = float(np.sum(s * s)) / sy if sy > 0 else 1.0
        t = min(max(t, opts.min_step), opts.max_step)
    return O
