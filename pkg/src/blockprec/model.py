"""Group l1 and group l1,2 distributions over the positive-definite cone.

Off-diagonal entries are counted once (upper triangle) in every density and
bound defined here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .pdcore import as_sym, is_pd, log_gamma

LOG2 = math.log(2.0)
LOGPI = math.log(math.pi)


class SingularityError(ValueError):
    """The exact 2-D normalizer is undefined at 2*lambda_1 == lambda_0."""


class UnsupportedConfigError(ValueError):
    """The exact 2-D normalizer is only known for lambda_D == lambda_1."""


class EstimationFailedError(RuntimeError):
    """All importance weights vanished or were non-finite."""


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty levels and Dirichlet prior strength.

    ``lambda_d`` penalizes the diagonal, ``lambda_1`` within-group entries and
    ``lambda_0`` between-group entries.
    """

    lambda_d: float
    lambda_1: float
    lambda_0: float
    alpha_0: float = 1.0

    def __post_init__(self):
        for name in ("lambda_d", "lambda_1", "lambda_0", "alpha_0"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")

    @property
    def ordered(self) -> bool:
        return self.lambda_0 > self.lambda_1

    @property
    def grid_admissible(self) -> bool:
        """The cross-validation constraint lambda_0 > lambda_1 > lambda_d / 2."""
        return self.lambda_0 > self.lambda_1 > 0.5 * self.lambda_d


@dataclass(frozen=True)
class Partition:
    """Assignment of D variables to K groups (0-based group ids internally)."""

    assign: tuple
    K: int = field(init=False)
    sizes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        z = np.asarray(self.assign, dtype=int)
        if z.ndim != 1 or z.size < 1:
            raise ValueError("partition needs at least one variable")
        labels = np.unique(z)
        if labels[0] != 0 or labels[-1] != labels.size - 1:
            raise ValueError(f"group ids must be contiguous from 0, got {labels.tolist()}")
        object.__setattr__(self, "assign", tuple(int(v) for v in z))
        object.__setattr__(self, "K", int(labels.size))
        object.__setattr__(self, "sizes", np.bincount(z, minlength=labels.size))

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Relabel arbitrary hashable labels to 0..K-1 in order of first appearance."""
        mapping: dict = {}
        z = []
        for lab in labels:
            if lab not in mapping:
                mapping[lab] = len(mapping)
            z.append(mapping[lab])
        return cls(tuple(z))

    @classmethod
    def single(cls, d: int) -> "Partition":
        return cls(tuple([0] * d))

    @classmethod
    def singletons(cls, d: int) -> "Partition":
        return cls(tuple(range(d)))

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self.assign, dtype=int)

    @property
    def D(self) -> int:
        return len(self.assign)

    @property
    def c_kl(self) -> np.ndarray:
        """Between-group pair counts, sizes[k] * sizes[l] (diagonal zeroed)."""
        c = np.outer(self.sizes, self.sizes)
        np.fill_diagonal(c, 0)
        return c

    @property
    def c_t(self) -> int:
        return int(np.sum(self.sizes * (self.sizes - 1) // 2))

    def same_group(self) -> np.ndarray:
        z = self.z
        return z[:, None] == z[None, :]

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.z == k)

    def to_list(self, one_based: bool = True) -> list[int]:
        off = 1 if one_based else 0
        return [v + off for v in self.assign]


def entry_penalties(p: Partition, c: PenaltyConfig) -> np.ndarray:
    """Per-entry Laplace rates: lambda_d on the diagonal, lambda_1 / lambda_0 off it."""
    lam = np.where(p.same_group(), c.lambda_1, c.lambda_0).astype(float)
    np.fill_diagonal(lam, c.lambda_d)
    return lam


def _check_dim(X: np.ndarray, p: Partition):
    if X.shape[-1] != p.D:
        raise ValueError(f"matrix dimension {X.shape[-1]} does not match partition of {p.D}")


def _gl1_batch(X: np.ndarray, lam: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(lam.shape[0], 1)
    diag = np.einsum("...ii->...i", X)
    return -np.abs(diag) @ np.diag(lam) - np.abs(X[..., iu[0], iu[1]]) @ lam[iu]


def _block_sq_norms(X: np.ndarray, p: Partition):
    """Yield ((k, l), sum of squared k-l entries) for every k < l."""
    z = p.z
    for k in range(p.K):
        rows = z == k
        for l in range(k + 1, p.K):
            cols = z == l
            blk = X[..., rows, :][..., :, cols]
            yield (k, l), np.sum(blk * blk, axis=(-2, -1))


def _gl12_batch(X: np.ndarray, p: Partition, c: PenaltyConfig) -> np.ndarray:
    d = p.D
    iu = np.triu_indices(d, 1)
    within = p.same_group()[iu]
    diag = np.einsum("...ii->...i", X)
    out = -c.lambda_d * np.sum(np.abs(diag), axis=-1)
    out = out - c.lambda_1 * np.sum(np.abs(X[..., iu[0], iu[1]])[..., within], axis=-1)
    ckl = p.c_kl
    for (k, l), sq in _block_sq_norms(X, p):
        out = out - c.lambda_0 * ckl[k, l] * np.sqrt(sq)
    return out


def logdens_gl1(X, p: Partition, c: PenaltyConfig) -> float:
    """Unnormalized log density of the group l1 distribution (-inf off the cone)."""
    X = as_sym(X)
    _check_dim(X, p)
    if not is_pd(X):
        return -math.inf
    return float(_gl1_batch(X, entry_penalties(p, c)))


def logdens_gl12(X, p: Partition, c: PenaltyConfig) -> float:
    """Unnormalized log density of the group l1,2 distribution (-inf off the cone)."""
    X = as_sym(X)
    _check_dim(X, p)
    if not is_pd(X):
        return -math.inf
    return float(_gl12_batch(X, p, c))


def log_bound_gl1(p: Partition, c: PenaltyConfig) -> float:
    """Log of the closed-form upper bound on the group l1 normalizer."""
    d = p.D
    n_pairs = d * (d - 1) // 2
    c_t = p.c_t
    return (
        -d * math.log(c.lambda_d)
        + n_pairs * LOG2
        - c_t * math.log(c.lambda_1)
        - (n_pairs - c_t) * math.log(c.lambda_0)
    )


def laplace_block_logz(C: int, rate: float) -> float:
    """log of the integral of exp(-rate * ||x||) over R^C."""
    return (
        0.5 * (C - 1) * LOGPI
        + log_gamma(0.5 * (C + 1))
        + C * LOG2
        - C * math.log(rate)
    )


def log_bound_gl12(p: Partition, c: PenaltyConfig) -> float:
    """Log of the closed-form upper bound on the group l1,2 normalizer."""
    out = -p.D * math.log(c.lambda_d) + p.c_t * (LOG2 - math.log(c.lambda_1))
    ckl = p.c_kl
    for k in range(p.K):
        for l in range(k + 1, p.K):
            C = int(ckl[k, l])
            out += laplace_block_logz(C, c.lambda_0 * C)
    return out


def log_bound(p: Partition, c: PenaltyConfig, kind: str) -> float:
    if kind == "gl1":
        return log_bound_gl1(p, c)
    if kind == "gl12":
        return log_bound_gl12(p, c)
    raise ValueError(f"unknown kind {kind!r}")


def logdens(X, p: Partition, c: PenaltyConfig, kind: str) -> float:
    if kind == "gl1":
        return logdens_gl1(X, p, c)
    if kind == "gl12":
        return logdens_gl12(X, p, c)
    raise ValueError(f"unknown kind {kind!r}")


def exact_logz_2d(c: PenaltyConfig, same_group: bool) -> float:
    """Exact log normalizer of the two-dimensional distribution.

    Requires ``lambda_d == lambda_1``.  For variables in different groups the
    off-diagonal rate is ``lambda_0`` and the closed form has a removable-looking
    but genuine singularity at ``lambda_0 == 2 lambda_1``; for
    ``lambda_0 > 2 lambda_1`` the arctan continues analytically to an artanh.
    """
    l1 = c.lambda_1
    if not math.isclose(c.lambda_d, l1, rel_tol=1e-12):
        raise UnsupportedConfigError("exact normalizer needs lambda_d == lambda_1")
    if same_group:
        return math.log((8.0 * math.pi * math.sqrt(3.0) - 18.0) / 27.0) - 3.0 * math.log(l1)
    l0 = c.lambda_0
    s2 = l1 * l1 - 0.25 * l0 * l0
    if abs(s2) <= 1e-12 * l1 * l1:
        raise SingularityError("exact normalizer is undefined at lambda_0 == 2 lambda_1")
    if s2 > 0:
        s = math.sqrt(s2)
        z = -l0 / (2.0 * s2 * l1 * l1) + math.atan(2.0 * s / l0) / s**3
    else:
        m = math.sqrt(-s2)
        z = l0 / (2.0 * m * m * l1 * l1) - math.atanh(2.0 * m / l0) / m**3
    return math.log(z)


# --- importance sampling ----------------------------------------------------


def sample_wishart(dof: float, dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Bartlett-decomposition draws from Wishart(identity, dof), shape (n, dim, dim)."""
    if dof <= dim - 1:
        raise ValueError("Wishart needs dof > dim - 1")
    A = np.zeros((n, dim, dim))
    il = np.tril_indices(dim, -1)
    A[:, il[0], il[1]] = rng.standard_normal((n, il[0].size))
    chi_dof = dof - np.arange(dim)
    A[:, np.arange(dim), np.arange(dim)] = np.sqrt(rng.chisquare(chi_dof, size=(n, dim)))
    return A @ np.swapaxes(A, -1, -2)


def wishart_logpdf(X: np.ndarray, dof: float) -> np.ndarray:
    """Log density of Wishart(identity, dof) at a batch of matrices."""
    dim = X.shape[-1]
    sign, logdet = np.linalg.slogdet(X)
    logdet = np.where(sign > 0, logdet, -np.inf)
    tr = np.einsum("...ii->...", X)
    log_norm = 0.5 * dof * dim * LOG2 + special.multigammaln(0.5 * dof, dim)
    return 0.5 * (dof - dim - 1) * logdet - 0.5 * tr - log_norm


def estimate_logz_is(
    p: Partition,
    c: PenaltyConfig,
    kind: str = "gl1",
    n_samples: int = 100_000,
    seed: int = 0,
    dof: float | None = None,
    batch: int = 50_000,
) -> tuple[float, float]:
    """Importance-sampling estimate of the log normalizer.

    The proposal is Wishart with identity scale and ``dof`` degrees of
    freedom (default ``D``).  Returns ``(log Z_hat, std_err)`` where the
    standard error of the log estimate comes from the delta method,
    ``sd(w) / (sqrt(n) * mean(w))``.
    """
    if n_samples < 1000:
        raise ValueError("importance sampling needs at least 1000 samples")
    d = p.D
    dof = float(d if dof is None else dof)
    rng = np.random.default_rng(seed)
    lam = entry_penalties(p, c)
    logw = np.empty(n_samples)
    start = 0
    while start < n_samples:
        m = min(batch, n_samples - start)
        X = sample_wishart(dof, d, m, rng)
        if kind == "gl1":
            logf = _gl1_batch(X, lam)
        elif kind == "gl12":
            logf = _gl12_batch(X, p, c)
        else:
            raise ValueError(f"unknown kind {kind!r}")
        logw[start:start + m] = logf - wishart_logpdf(X, dof)
        start += m
    finite = np.isfinite(logw)
    if not np.any(finite):
        raise EstimationFailedError("no finite importance weights")
    logw = np.where(finite, logw, -np.inf)
    shift = np.max(logw)
    w = np.exp(logw - shift)
    mean_w = w.mean()
    if mean_w <= 0.0:
        raise EstimationFailedError("all importance weights underflowed")
    se = w.std(ddof=1) / (math.sqrt(n_samples) * mean_w)
    return float(shift + math.log(mean_w)), float(se)
