"""Data ingestion, standardization, synthetic block data and cross-validation."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import Partition, PenaltyConfig, entry_penalties
from .pdcore import InvalidInputError, SampleStats, gaussian_loglik, is_pd
from .solver import ConvergenceError, SolverOptions, fit_gl12, fit_l1, tikhonov
from .structure import SearchOptions, search

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed CSV input; the message names the offending line."""


class DegenerateColumnError(ValueError):
    """One or more columns have zero variance."""


@dataclass
class Dataset:
    rows: np.ndarray
    names: list = field(default_factory=list)
    provenance: str = ""

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2:
            raise InvalidInputError("dataset rows must be a 2-D array")
        if self.rows.shape[0] < 2:
            raise InvalidInputError(f"need at least 2 rows, got {self.rows.shape[0]}")
        if not np.all(np.isfinite(self.rows)):
            raise InvalidInputError("dataset contains non-finite values")
        if not self.names:
            self.names = [f"x{j + 1}" for j in range(self.rows.shape[1])]
        elif len(self.names) != self.rows.shape[1]:
            raise InvalidInputError("number of column names does not match the data")

    @property
    def N(self) -> int:
        return self.rows.shape[0]

    @property
    def D(self) -> int:
        return self.rows.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.rows[idx], list(self.names), self.provenance)


def ingest_csv(path, has_header: bool = False) -> Dataset:
    """Read a rectangular numeric CSV file.

    Line numbers in error messages are 1-based and count the header.
    """
    rows, names, width = [], [], None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            if has_header and not names and not rows:
                names = [cell.strip() for cell in rec]
                width = len(names)
                continue
            if width is None:
                width = len(rec)
            if len(rec) != width:
                raise ParseError(f"{path}: row {lineno} has {len(rec)} fields, expected {width}")
            try:
                vals = [float(cell) for cell in rec]
            except ValueError:
                bad = next(c for c in rec if not _is_float(c))
                raise ParseError(f"{path}: row {lineno} has non-numeric cell {bad!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"{path}: row {lineno} has a non-finite value")
            rows.append(vals)
    if len(rows) < 2:
        raise ParseError(f"{path}: need at least 2 data rows, found {len(rows)}")
    return Dataset(np.array(rows), names, provenance=f"csv:{os.path.basename(str(path))}")


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_matrix_csv(path, M) -> None:
    np.savetxt(path, np.asarray(M, dtype=float), delimiter=",", fmt="%.17g")


def standardize(d: Dataset) -> tuple[Dataset, SampleStats]:
    """Center and scale to unit (1/N) variance.

    The returned stats hold the transform so held-out rows can be mapped with
    :func:`apply_transform`.
    """
    X = d.rows
    mean = X.mean(axis=0)
    sd = np.sqrt(np.mean((X - mean) ** 2, axis=0))
    bad = [d.names[j] for j in np.flatnonzero(sd <= 1e-12 * (1.0 + np.abs(mean)))]
    if bad:
        raise DegenerateColumnError(f"zero-variance column(s): {', '.join(bad)}")
    Z = (X - mean) / sd
    S = Z.T @ Z / d.N
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    stats = SampleStats(n=d.N, dim=d.D, scatter=S, mean=mean, scale=sd)
    return Dataset(Z, list(d.names), d.provenance), stats


def apply_transform(stats: SampleStats, X) -> np.ndarray:
    return (np.asarray(X, dtype=float) - stats.mean) / stats.scale


def heldout_loglik(stats: SampleStats, omega, X) -> float:
    """Average per-row log likelihood of raw rows ``X`` under the fitted model."""
    Z = apply_transform(stats, X)
    test = SampleStats(n=Z.shape[0], dim=Z.shape[1], scatter=Z.T @ Z / Z.shape[0],
                       mean=np.zeros(Z.shape[1]), scale=np.ones(Z.shape[1]))
    return gaussian_loglik(test, omega) / Z.shape[0]


# --- synthetic data ----------------------------------------------------------------


def planted_precision(sizes, within_strength: float = 0.5, noise: float = 0.0,
                      rng: np.random.Generator | None = None):
    """Block-diagonal precision with optional between-block noise.

    Within-block off-diagonal magnitudes are uniform on
    ``[within_strength / 2, within_strength]`` with random signs, between-block
    entries uniform on ``[-noise, noise]``.  The diagonal is set to
    ``1 + sum_j |off_ij|`` so the matrix is strictly diagonally dominant.
    """
    rng = rng or np.random.default_rng(0)
    sizes = [int(s) for s in sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError("group sizes must be positive")
    if within_strength < 0 or noise < 0:
        raise ValueError("within_strength and noise must be non-negative")
    z = np.repeat(np.arange(len(sizes)), sizes)
    d = z.size
    same = z[:, None] == z[None, :]
    mag = rng.uniform(0.5 * within_strength, within_strength, size=(d, d))
    sign = rng.choice([-1.0, 1.0], size=(d, d))
    between = rng.uniform(-noise, noise, size=(d, d)) if noise > 0 else np.zeros((d, d))
    off = np.where(same, mag * sign, between)
    off = np.triu(off, 1)
    off = off + off.T
    omega = off + np.diag(1.0 + np.abs(off).sum(axis=1))
    if not is_pd(omega):
        raise ValueError("planted precision is not positive definite")
    return omega, Partition(tuple(int(v) for v in z))


def synth_blocks(sizes, n: int, within_strength: float = 0.5, noise: float = 0.0,
                 seed: int = 0) -> tuple[Dataset, Partition, np.ndarray]:
    """Draw ``n`` rows from N(0, omega^-1) for a planted block precision.

    Returns the dataset, the planted partition and the planted precision.
    """
    rng = np.random.default_rng(seed)
    omega, part = planted_precision(sizes, within_strength, noise, rng)
    L = np.linalg.cholesky(omega)
    # x = L^-T e has covariance (L L^T)^-1
    E = rng.standard_normal((n, omega.shape[0]))
    X = np.linalg.solve(L.T, E.T).T
    ds = Dataset(X, provenance=f"synth:sizes={','.join(map(str, sizes))};n={n};seed={seed}")
    return ds, part, omega


# --- cross-validation -----------------------------------------------------------------

METHODS = ("T", "IL1", "GL12-k", "GL1-ug", "GL1-ue", "GL12-ug", "GL12-ue")


def penalty_grid(n_points: int = 10, hi: float = 1e4, lo: float = 1.0) -> np.ndarray:
    """Descending log-spaced grid including both endpoints."""
    return np.logspace(math.log10(hi), math.log10(lo), n_points)


def grid_triples(grid) -> list[PenaltyConfig]:
    """All (lambda_d, lambda_1, lambda_0) with lambda_0 > lambda_1 > lambda_d / 2."""
    out = []
    for ld, l1, l0 in itertools.product(grid, grid, grid):
        if l0 > l1 > 0.5 * ld:
            out.append(PenaltyConfig(float(ld), float(l1), float(l0), 1.0))
    return out


@dataclass
class CvOptions:
    methods: tuple = ("T", "IL1", "GL12-k", "GL1-ue")
    n_folds: int = 5
    grid: tuple = tuple(penalty_grid())
    tikhonov_grid: tuple | None = None
    il1_grid: tuple | None = None
    planted: Partition | None = None
    seed: int = 0
    n_threads: int | None = None
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(tol=1e-5, kkt_tol=1e-4, max_iter=3000))


@dataclass
class CvReport:
    methods: list
    fold_ll: dict
    selected: dict
    wall_clock: dict
    n_candidates: dict
    folds: list

    @property
    def median_ll(self) -> dict:
        return {m: float(np.median(v)) for m, v in self.fold_ll.items()}

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "methods": list(self.methods),
            "fold_test_ll": {m: [float(v) for v in self.fold_ll[m]] for m in self.methods},
            "median_test_ll": self.median_ll,
            "selected": self.selected,
            "n_candidates": self.n_candidates,
            "folds": [[int(i) for i in f] for f in self.folds],
        }
        if include_timing:
            out["timing"] = {"wall_clock_seconds": self.wall_clock}
        return out


def fold_indices(n: int, n_folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [np.sort(f) for f in np.array_split(perm, n_folds)]


def _n_threads(opt: int | None) -> int:
    if opt is not None:
        return max(1, int(opt))
    env = os.environ.get("BLOCKPREC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer BLOCKPREC_THREADS=%r", env)
    return 1


def fit_method(method: str, stats: SampleStats, param, opts: CvOptions) -> np.ndarray:
    """Fit one method at one penalty setting on standardized statistics."""
    S, n = stats.scatter, stats.n
    if method == "T":
        return tikhonov(S, float(param))
    if method == "IL1":
        lam = np.full(S.shape, float(param))
        return fit_l1(S, lam, n=n, opts=opts.solver)
    if method == "GL12-k":
        if opts.planted is None:
            raise ValueError("GL12-k needs the planted partition")
        return fit_gl12(S, opts.planted, param, n=n, opts=opts.solver)
    kind, tag = method.split("-")
    sopts = SearchOptions(
        kind="gl1" if kind == "GL1" else "gl12",
        method="greedy" if tag == "ug" else "exhaustive",
        solver=opts.solver,
    )
    return search(stats, param, sopts).final_omega


def _candidates(method: str, opts: CvOptions):
    if method == "T":
        return list(opts.tikhonov_grid or penalty_grid(10, 1e2, 1e-2))
    if method == "IL1":
        return list(opts.il1_grid or opts.grid)
    return grid_triples(opts.grid)


def _score(method, stats_tr, X_val, param, opts) -> float:
    try:
        omega = fit_method(method, stats_tr, param, opts)
        return heldout_loglik(stats_tr, omega, X_val)
    except (ConvergenceError, ValueError, np.linalg.LinAlgError) as err:
        log.info("%s failed at %s: %s", method, param, err)
        return -math.inf


def _describe(param):
    if isinstance(param, PenaltyConfig):
        return {"lambda_d": param.lambda_d, "lambda_1": param.lambda_1, "lambda_0": param.lambda_0}
    return {"lambda": float(param)}


def cross_validate(d: Dataset, opts: CvOptions | None = None) -> CvReport:
    """K-fold test log likelihood with an inner validation split for penalty selection.

    Each training portion is split again: a random fifth is held out for
    validation, penalties are chosen by validation log likelihood, and the
    winner is refit on the full training portion.  Standardization always uses
    the statistics of the rows a model is fit on.
    """
    opts = opts or CvOptions()
    if d.N < 10:
        raise InvalidInputError(f"cross-validation needs N >= 10, got {d.N}")
    for m in opts.methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    rng = np.random.default_rng(opts.seed)
    folds = fold_indices(d.N, opts.n_folds, rng)
    inner_perms = [rng.permutation(d.N - f.size) for f in folds]
    fold_ll = {m: [] for m in opts.methods}
    selected = {m: [] for m in opts.methods}
    wall = {m: 0.0 for m in opts.methods}
    n_cand = {m: len(_candidates(m, opts)) for m in opts.methods}
    workers = _n_threads(opts.n_threads)

    for f, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(d.N), test_idx)
        X_tr, X_te = d.rows[train_idx], d.rows[test_idx]
        perm = inner_perms[f]
        n_val = max(1, train_idx.size // 5)
        val_rows, fit_rows = X_tr[perm[:n_val]], X_tr[perm[n_val:]]
        _, stats_fit = standardize(Dataset(fit_rows))
        _, stats_tr = standardize(Dataset(X_tr))
        for m in opts.methods:
            t0 = time.perf_counter()
            cands = _candidates(m, opts)
            if workers > 1:
                with ThreadPoolExecutor(workers) as ex:
                    scores = list(ex.map(lambda p: _score(m, stats_fit, val_rows, p, opts), cands))
            else:
                scores = [_score(m, stats_fit, val_rows, p, opts) for p in cands]
            best = int(np.argmax(scores))  # first maximum in grid order
            param = cands[best]
            try:
                omega = fit_method(m, stats_tr, param, opts)
                ll = heldout_loglik(stats_tr, omega, X_te)
            except (ConvergenceError, ValueError, np.linalg.LinAlgError) as err:
                log.warning("%s refit failed on fold %d: %s", m, f, err)
                ll = -math.inf
            fold_ll[m].append(ll)
            selected[m].append({**_describe(param), "validation_ll": float(scores[best])})
            wall[m] += time.perf_counter() - t0
    return CvReport(list(opts.methods), fold_ll, selected, wall, n_cand, folds)


def il1_penalties(lam: float, d: int) -> np.ndarray:
    return np.full((d, d), float(lam))


def fixed_penalties(p: Partition, c: PenaltyConfig) -> np.ndarray:
    return entry_penalties(p, c)
