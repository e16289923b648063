"""Symmetric / positive-definite linear algebra and special functions.

Matrices are plain ``numpy`` arrays.  Wherever a symmetric matrix is accepted
the upper triangle is authoritative: :func:`as_sym` mirrors it into the lower
triangle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class InvalidInputError(ValueError):
    """Raised for non-finite or malformed matrix input."""


class NoIntervalError(ValueError):
    """Raised when the free entry cannot be completed to a PD matrix."""


def as_sym(X) -> np.ndarray:
    """Return a symmetric float copy of ``X`` built from its upper triangle."""
    X = np.array(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1] or X.shape[0] < 1:
        raise InvalidInputError(f"expected a square matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("matrix has non-finite entries")
    upper = np.triu(X)
    return upper + np.triu(X, 1).T


@dataclass(frozen=True)
class SampleStats:
    """Sufficient statistics of a (centered) data matrix.

    ``scatter`` is the 1/N sample covariance of the transformed data.  ``mean``
    and ``scale`` record the column transform so it can be applied to held-out
    rows.
    """

    n: int
    dim: int
    scatter: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_data(cls, X, mean=None, scale=None) -> "SampleStats":
        X = np.asarray(X, dtype=float)
        n, d = X.shape
        mean = X.mean(axis=0) if mean is None else np.asarray(mean, dtype=float)
        scale = np.ones(d) if scale is None else np.asarray(scale, dtype=float)
        Z = (X - mean) / scale
        S = Z.T @ Z / n
        return cls(n=n, dim=d, scatter=0.5 * (S + S.T), mean=mean, scale=scale)

    @classmethod
    def from_scatter(cls, S, n: int) -> "SampleStats":
        S = as_sym(S)
        d = S.shape[0]
        return cls(n=int(n), dim=d, scatter=S, mean=np.zeros(d), scale=np.ones(d))


def _cholesky(X: np.ndarray):
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return None


def cholesky_logdet(X) -> tuple[float, bool]:
    """Log-determinant through a Cholesky factorization.

    Returns ``(logdet, True)`` for a positive-definite ``X`` and
    ``(nan, False)`` otherwise.
    """
    X = as_sym(X)
    L = _cholesky(X)
    if L is None:
        return float("nan"), False
    diag = np.diag(L)
    if np.any(diag <= 0.0):
        return float("nan"), False
    return float(2.0 * np.sum(np.log(diag))), True


def is_pd(X) -> bool:
    """True iff every Cholesky pivot of ``X`` is strictly positive."""
    return cholesky_logdet(X)[1]


def _det_at(X: np.ndarray, i: int, j: int, t: float) -> float:
    Y = X.copy()
    Y[i, j] = Y[j, i] = t
    return float(np.linalg.det(Y))


def pd_interval(X, i: int, j: int) -> tuple[float, float]:
    """Open interval of values for entry ``(i, j)`` that keep ``X`` PD.

    The determinant is linear in a diagonal entry and quadratic in an
    off-diagonal one, so it is sampled at two (resp. three) trial values, the
    polynomial is recovered exactly and its roots give the endpoints.  The
    current value of ``X[i, j]`` is ignored.

    Raises
    ------
    NoIntervalError
        If the principal submatrices that do not contain the free entry are
        not positive definite.
    """
    X = as_sym(X)
    d = X.shape[0]
    if not (0 <= i < d and 0 <= j < d):
        raise IndexError(f"entry ({i}, {j}) out of range for dimension {d}")
    if i > j:
        i, j = j, i

    for k in {i, j}:
        keep = np.arange(d) != k
        if d > 1 and not is_pd(X[np.ix_(keep, keep)]):
            raise NoIntervalError(f"submatrix without index {k} is not PD")

    if i == j:
        if d == 1:
            return 0.0, math.inf
        # det(t) = m * t + c with m = det of the complementary minor > 0
        h = max(abs(X[i, i]), float(np.max(np.abs(np.diag(X)))), 1.0)
        d0 = _det_at(X, i, i, 0.0)
        d1 = _det_at(X, i, i, h)
        slope = (d1 - d0) / h
        if slope <= 0.0:
            raise NoIntervalError("complementary minor is not PD")
        return -d0 / slope, math.inf

    # det(t) = a t^2 + b t + c with a < 0; the PD set lies inside |t| < sqrt(Xii Xjj)
    h = math.sqrt(X[i, i] * X[j, j])
    dm = _det_at(X, i, j, -h)
    d0 = _det_at(X, i, j, 0.0)
    dp = _det_at(X, i, j, h)
    a = ((dp + dm) / 2.0 - d0) / (h * h)
    b = (dp - dm) / (2.0 * h)
    c = d0
    if a >= 0.0:
        raise NoIntervalError("determinant is not concave in the free entry")
    disc = b * b - 4.0 * a * c
    if disc <= 0.0:
        raise NoIntervalError("no value of the free entry gives a PD matrix")
    sq = math.sqrt(disc)
    # numerically stable pair of roots
    q = -0.5 * (b + math.copysign(sq, b))
    r1 = q / a
    r2 = c / q if q != 0.0 else -r1
    lo, hi = min(r1, r2), max(r1, r2)
    return lo, hi


# --- special functions -------------------------------------------------------

_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)

# Bernoulli-number coefficients of the Stirling series for log-gamma
_STIRLING = (1 / 12, -1 / 360, 1 / 1260, -1 / 1680, 1 / 1188, -691 / 360360, 1 / 156)
# B_{2k} / (2k) for the digamma asymptotic series
_DIGAMMA_ASYM = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)


def _check_positive(x):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x <= 0.0):
        raise ValueError("argument must be finite and strictly positive")
    return x


def _lanczos_lgamma(x: np.ndarray) -> np.ndarray:
    # valid for x >= 0.5
    z = x - 1.0
    acc = np.full_like(z, _LANCZOS_COEF[0])
    for k, ck in enumerate(_LANCZOS_COEF[1:], start=1):
        acc = acc + ck / (z + k)
    t = z + _LANCZOS_G + 0.5
    return 0.5 * LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)


def _stirling_lgamma(x: np.ndarray) -> np.ndarray:
    # x >= 10
    inv = 1.0 / x
    inv2 = inv * inv
    series = np.zeros_like(x)
    power = inv.copy()
    for c in _STIRLING:
        series = series + c * power
        power = power * inv2
    return (x - 0.5) * np.log(x) - x + 0.5 * LOG_2PI + series


def log_gamma(x):
    """log Gamma(x) for x > 0 (Lanczos for small x, Stirling series above 10)."""
    x = _check_positive(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    big = x >= 10.0
    out[big] = _stirling_lgamma(x[big])
    small = ~big
    xs = x[small]
    # shift tiny arguments up through Gamma(x) = Gamma(x + 1) / x
    shifted = xs < 0.5
    res = np.empty_like(xs)
    res[~shifted] = _lanczos_lgamma(xs[~shifted])
    res[shifted] = _lanczos_lgamma(xs[shifted] + 1.0) - np.log(xs[shifted])
    # Lanczos loses relative accuracy at the zeros x = 1, 2; recenter there
    out[small] = res
    near1 = np.abs(x - 1.0) < 0.2
    near2 = np.abs(x - 2.0) < 0.2
    if np.any(near1 | near2):
        out[near1] = _lgamma_near_one(x[near1] - 1.0)
        out[near2] = _lgamma_near_one(x[near2] - 2.0) + np.log1p(x[near2] - 2.0)
    return float(out[0]) if scalar else out


# Taylor coefficients of log Gamma(1 + e): -gamma*e + sum_{k>=2} (-1)^k zeta(k)/k e^k
_EULER = 0.57721566490153286061
_ZETA = (
    1.6449340668482264365, 1.2020569031595942854, 1.0823232337111381915,
    1.0369277551433699263, 1.0173430619844491397, 1.0083492773819228268,
    1.0040773561979443394, 1.0020083928260822144, 1.0009945751278180853,
    1.0004941886041194646, 1.0002460865533080483, 1.0001227133475784891,
    1.0000612481350587048, 1.0000305882363070205, 1.0000152822594086519,
    1.0000076371976378998, 1.0000038172932649998, 1.0000019082127165539,
    1.0000009539620338728, 1.0000004769329867878, 1.0000002384505027277,
    1.0000001192199259653, 1.0000000596081890513, 1.0000000298035035147,
    1.0000000149015548284, 1.0000000074507117898, 1.0000000037252903984,
    1.0000000018626597235,
)


def _lgamma_near_one(e: np.ndarray) -> np.ndarray:
    # |e| < 0.2: series truncation error < 0.2^30 / 30
    out = -_EULER * e
    power = e * e
    for k, zk in enumerate(_ZETA, start=2):
        out = out + ((-1) ** k) * zk / k * power
        power = power * e
    return out


def digamma(x):
    """psi(x) for x > 0 via upward recurrence and the asymptotic series."""
    x = _check_positive(x)
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    acc = np.zeros_like(x)
    while True:
        low = x < 10.0
        if not np.any(low):
            break
        acc[low] -= 1.0 / x[low]
        x[low] += 1.0
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    power = inv2.copy()
    for c in _DIGAMMA_ASYM:
        series = series + c * power
        power = power * inv2
    out = acc + np.log(x) - 0.5 / x - series
    return float(out[0]) if scalar else out


def gaussian_loglik(stats: SampleStats, omega) -> float:
    """Log-likelihood of centered data under N(0, omega^-1).

    Equal to ``(N/2) (log det omega - tr(omega S) - D log 2pi)``.
    """
    omega = as_sym(omega)
    if omega.shape != stats.scatter.shape:
        raise InvalidInputError(
            f"precision shape {omega.shape} does not match data dimension {stats.dim}"
        )
    logdet, ok = cholesky_logdet(omega)
    if not ok:
        raise ValueError("precision matrix is not positive definite")
    tr = float(np.sum(omega * stats.scatter))
    return 0.5 * stats.n * (logdet - tr - stats.dim * LOG_2PI)
