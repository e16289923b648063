"""Gibbs sampling of the group l1 / l1,2 matrix distributions on the PD cone.

Each sweep visits the unique entries ``(i, j), i <= j`` and redraws the entry
from its exact conditional: a truncated exponential on the diagonal, a
truncated Laplace off it, and (for between-group entries of the l1,2
distribution) a truncated hyperbolic density.  The truncation interval is the
set of values keeping the matrix positive definite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import Partition, PenaltyConfig, entry_penalties
from .pdcore import is_pd, pd_interval


class MassUnderflowError(FloatingPointError):
    """The truncation interval carries no representable probability mass."""


class InvariantError(RuntimeError):
    """A chain state left the positive-definite cone."""


def _uniform(rng, size):
    return rng.random(size) if size is not None else rng.random()


def sample_trunc_exponential(rate, lo, hi=math.inf, rng=None, size=None):
    """Draw from rate * exp(-rate (x - lo)) restricted to (lo, hi) by inversion."""
    rng = rng if rng is not None else np.random.default_rng()
    if not lo < hi:
        raise ValueError(f"empty interval ({lo}, {hi})")
    width = hi - lo
    mass = 1.0 if math.isinf(width) else -math.expm1(-rate * width)
    if not mass > 0.0:
        raise MassUnderflowError(f"no mass on ({lo}, {hi}) at rate {rate}")
    u = _uniform(rng, size)
    x = lo - np.log1p(-u * mass) / rate
    return np.minimum(x, hi) if size is not None else float(min(x, hi))


def sample_trunc_laplace(rate, lo, hi, rng=None, size=None):
    """Draw from exp(-rate |x|) restricted to (lo, hi) by inversion."""
    rng = rng if rng is not None else np.random.default_rng()
    if not lo < hi:
        raise ValueError(f"empty interval ({lo}, {hi})")
    if lo >= 0.0:
        return sample_trunc_exponential(rate, lo, hi, rng, size)
    if hi <= 0.0:
        return -sample_trunc_exponential(rate, -hi, -lo, rng, size)
    # both signs: pick the side by its mass, then invert on that side
    m_neg = 1.0 if math.isinf(lo) else -math.expm1(rate * lo)
    m_pos = 1.0 if math.isinf(hi) else -math.expm1(-rate * hi)
    total = m_neg + m_pos
    if not total > 0.0:
        raise MassUnderflowError(f"no mass on ({lo}, {hi}) at rate {rate}")
    u = _uniform(rng, size) * total
    u = np.asarray(u, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.where(
            u < m_neg,
            np.log1p(-u) / rate,  # negative side, measured outward from 0
            -np.log1p(-(u - m_neg)) / rate,
        )
    out = np.clip(out, lo, hi)
    return out if size is not None else float(out)


# --- truncated hyperbolic ---------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _hyp_logdens(x, rate, gamma):
    return -rate * np.sqrt(gamma * gamma + x * x)


class TruncatedHyperbolic:
    """Numerical CDF for exp(-rate sqrt(gamma^2 + x^2)) on (lo, hi).

    Panels of 16-point Gauss-Legendre quadrature give the cumulative mass;
    within a panel the quantile is found by safeguarded Newton iteration.
    Mass further than 60 nats below the interval maximum is dropped.
    """

    def __init__(self, rate, gamma, lo, hi, n_panels=64, cdf_tol=1e-10):
        if not lo < hi:
            raise ValueError(f"empty interval ({lo}, {hi})")
        self.rate, self.gamma = float(rate), float(abs(gamma))
        self.cdf_tol = cdf_tol
        x_star = min(max(0.0, lo), hi)
        self.log_peak = float(_hyp_logdens(x_star, self.rate, self.gamma))
        reach = math.sqrt(self.gamma**2 + x_star**2) + 60.0 / self.rate
        cut = math.sqrt(max(reach**2 - self.gamma**2, 0.0))
        a, b = max(lo, -cut), min(hi, cut)
        if not a < b:
            a, b = lo, hi
        edges = np.linspace(a, b, n_panels + 1)
        if a < 0.0 < b:
            edges = np.unique(np.append(edges, 0.0))
        self.edges = edges
        mass = np.array([self._integral(edges[k], edges[k + 1]) for k in range(edges.size - 1)])
        self.cum = np.concatenate([[0.0], np.cumsum(mass)])
        self.total = float(self.cum[-1])
        if not (np.isfinite(self.total) and self.total > 0.0):
            raise MassUnderflowError("hyperbolic quadrature produced no mass")

    def _f(self, x):
        return np.exp(_hyp_logdens(x, self.rate, self.gamma) - self.log_peak)

    def _integral(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        x = mid[..., None] + half[..., None] * _GL_NODES
        return half * (self._f(x) @ _GL_WEIGHTS)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.edges[0], self.edges[-1])
        k = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.edges.size - 2)
        return (self.cum[k] + self._integral(self.edges[k], x)) / self.total

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        target = u * self.total
        k = np.clip(np.searchsorted(self.cum, target, side="right") - 1, 0, self.edges.size - 2)
        left, right = self.edges[k].copy(), self.edges[k + 1].copy()
        resid = target - self.cum[k]
        x = 0.5 * (left + right)
        tol = self.cdf_tol * self.total
        for _ in range(100):
            g = self._integral(self.edges[k], x) - resid
            done = np.abs(g) <= tol
            if np.all(done):
                break
            left = np.where(g < 0, x, left)
            right = np.where(g > 0, x, right)
            step = x - g / self._f(x)
            inside = (step > left) & (step < right)
            x = np.where(done, x, np.where(inside, step, 0.5 * (left + right)))
        return x

    def sample(self, rng, size=None):
        u = _uniform(rng, size)
        x = self.ppf(u)
        return x if size is not None else float(x)


def _hyperbolic_rejection(rate, gamma, lo, hi, rng, max_tries=100_000):
    # Laplace envelope: sqrt(gamma^2 + x^2) >= |x|, acceptance >= exp(-rate*gamma)
    for _ in range(max_tries):
        x = sample_trunc_laplace(rate, lo, hi, rng)
        if rng.random() < math.exp(-rate * (math.sqrt(gamma * gamma + x * x) - abs(x))):
            return x
    raise MassUnderflowError("rejection sampler for the hyperbolic density did not accept")


def sample_trunc_hyperbolic(rate, gamma, lo, hi, rng=None, size=None):
    """Draw from exp(-rate sqrt(gamma^2 + x^2)) restricted to (lo, hi).

    Uses numerical CDF inversion; falls back to Laplace-envelope rejection
    when the quadrature cannot be built.
    """
    rng = rng if rng is not None else np.random.default_rng()
    try:
        dist = TruncatedHyperbolic(rate, gamma, lo, hi)
    except (MassUnderflowError, FloatingPointError, ValueError) as err:
        if not lo < hi:
            raise
        if size is None:
            return _hyperbolic_rejection(rate, gamma, lo, hi, rng)
        try:
            return np.array([_hyperbolic_rejection(rate, gamma, lo, hi, rng) for _ in range(size)])
        except MassUnderflowError:
            raise MassUnderflowError(f"both hyperbolic samplers failed: {err}") from None
    return dist.sample(rng, size)


def hyperbolic_gig_step(x, rate, gamma, lo, hi, rng):
    """One data-augmentation update for the truncated hyperbolic conditional.

    exp(-rate sqrt(gamma^2 + x^2)) is a zero-mean normal scale mixture over a
    GIG(p=1, a=rate^2, b=gamma^2) variance.  Drawing the variance given ``x``
    (GIG with p=1/2, b=gamma^2 + x^2) and then ``x`` from the truncated normal
    leaves the truncated hyperbolic invariant.
    """
    a = rate * rate
    b = gamma * gamma + x * x
    if b <= 0.0:
        w = rng.gamma(0.5, 2.0 / a)
    else:
        w = stats.geninvgauss.rvs(0.5, math.sqrt(a * b), scale=math.sqrt(b / a), random_state=rng)
    sd = math.sqrt(w)
    return float(stats.truncnorm.rvs(lo / sd, hi / sd, scale=sd, random_state=rng))


# --- chain ---------------------------------------------------------------------


@dataclass
class ChainConfig:
    n_sweeps: int = 1200
    burn_in: int = 200
    seed: int = 0
    thin: int = 1
    random_order: bool = False
    hyperbolic_backend: str = "quad"  # or "gig"

    def __post_init__(self):
        if not self.n_sweeps > self.burn_in >= 0:
            raise ValueError("need n_sweeps > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.hyperbolic_backend not in ("quad", "gig"):
            raise ValueError(f"unknown hyperbolic backend {self.hyperbolic_backend!r}")


@dataclass
class ChainSummary:
    mean_abs: np.ndarray
    mean_diag: np.ndarray
    n_kept: int
    ess: np.ndarray
    n_updates: int
    n_nudged: int
    diagnostics: dict = field(default_factory=dict)
    samples: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "mean_abs": self.mean_abs.tolist(),
            "mean_diag": self.mean_diag.tolist(),
            "n_kept": self.n_kept,
            "ess": self.ess.tolist(),
            "n_updates": self.n_updates,
            "n_nudged": self.n_nudged,
            "diagnostics": self.diagnostics,
        }


def effective_sample_size(x: np.ndarray) -> float:
    """ESS from the autocorrelation sum truncated at the first non-positive pair."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    var = float(xc @ xc) / n
    if var == 0.0 or n < 4:
        return float(n)
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = 1.0
    for k in range(1, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
    return n / tau


class GibbsSampler:
    """Entry-wise Gibbs sampler for one (kind, partition, config)."""

    def __init__(self, kind: str, p: Partition, c: PenaltyConfig, cfg: ChainConfig):
        if kind not in ("gl1", "gl12"):
            raise ValueError(f"unknown kind {kind!r}")
        self.kind, self.p, self.c, self.cfg = kind, p, c, cfg
        self.lam = entry_penalties(p, c)
        self.rng = np.random.default_rng(cfg.seed)
        d = p.D
        self.entries = [(i, j) for i in range(d) for j in range(i, d)]
        self.X = np.eye(d) / c.lambda_d
        self.n_updates = 0
        self.n_nudged = 0
        self._z = p.z
        self._ckl = p.c_kl

    def _between_gamma(self, i, j):
        z = self._z
        rows = np.flatnonzero(z == z[i])
        cols = np.flatnonzero(z == z[j])
        blk = self.X[np.ix_(rows, cols)]
        sq = float(np.sum(blk * blk)) - self.X[i, j] ** 2
        return math.sqrt(max(sq, 0.0))

    def update(self, i, j):
        X = self.X
        b0, b1 = pd_interval(X, i, j)
        rng = self.rng
        if i == j:
            x = sample_trunc_exponential(self.lam[i, i], max(b0, 0.0), b1, rng)
        elif self.kind == "gl12" and self._z[i] != self._z[j]:
            rate = self.c.lambda_0 * self._ckl[self._z[i], self._z[j]]
            gamma = self._between_gamma(i, j)
            if self.cfg.hyperbolic_backend == "gig":
                x = hyperbolic_gig_step(X[i, j], rate, gamma, b0, b1, rng)
            else:
                x = sample_trunc_hyperbolic(rate, gamma, b0, b1, rng)
        else:
            x = sample_trunc_laplace(self.lam[i, j], b0, b1, rng)
        width = (b1 - b0) if math.isfinite(b1) else max(1.0, abs(b0))
        if x - b0 < 1e-14 * max(1.0, abs(b0)):
            x = b0 + 1e-12 * width
            self.n_nudged += 1
        elif math.isfinite(b1) and b1 - x < 1e-14 * max(1.0, abs(b1)):
            x = b1 - 1e-12 * width
            self.n_nudged += 1
        X[i, j] = X[j, i] = x
        self.n_updates += 1
        if not is_pd(X):
            raise InvariantError(f"state left the PD cone after updating ({i}, {j})")

    def sweep(self):
        order = self.entries
        if self.cfg.random_order:
            order = [order[k] for k in self.rng.permutation(len(order))]
        for i, j in order:
            self.update(i, j)


def gibbs_chain(kind: str, p: Partition, c: PenaltyConfig, cfg: ChainConfig,
                keep_samples: bool = False) -> ChainSummary:
    """Run one chain and summarize E|X_ij| over the post-burn-in samples."""
    sampler = GibbsSampler(kind, p, c, cfg)
    kept = []
    for sweep in range(cfg.n_sweeps):
        sampler.sweep()
        if sweep >= cfg.burn_in and (sweep - cfg.burn_in) % cfg.thin == 0:
            kept.append(sampler.X.copy())
    samples = np.asarray(kept)
    absval = np.abs(samples)
    d = p.D
    ess = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            ess[i, j] = ess[j, i] = effective_sample_size(absval[:, i, j])
    return ChainSummary(
        mean_abs=absval.mean(axis=0),
        mean_diag=np.einsum("nii->i", samples) / samples.shape[0],
        n_kept=samples.shape[0],
        ess=ess,
        n_updates=sampler.n_updates,
        n_nudged=sampler.n_nudged,
        diagnostics={"kind": kind, "partition": p.to_list(), "seed": cfg.seed,
                     "hyperbolic_backend": cfg.hyperbolic_backend},
        samples=samples if keep_samples else None,
    )
