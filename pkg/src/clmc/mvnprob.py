"""Multivariate normal rectangle probabilities and simultaneous quantiles.

The rectangle probability P(l < Z < u) for Z ~ N(0, R) is computed with the
sequential-conditioning reformulation: after a Cholesky factorization
R = L L', the integral over the rectangle becomes an integral over the unit
cube in which coordinate i is sampled conditionally on coordinates < i.
The cube integral is evaluated with randomized quasi-Monte Carlo (scrambled
Sobol points); independent scrambles ("shifts") give an empirical standard
error, and the point count per shift is doubled until the requested absolute
error is met.  Variables are pre-ordered by ascending univariate interval
probability, which reduces the variance of the conditioned integrand.

The equicoordinate quantile solves P(max_i |Z_i| <= q) = 1 - alpha by
safeguarded bracketing between the naive two-sided normal cutoff (always a
lower bound) and the Bonferroni cutoff (always an upper bound, by the union
bound).  All estimates are deterministic functions of the configured seed.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.special import chdtri, ndtr, ndtri
from scipy.stats import qmc

__all__ = [
    "QmcConfig",
    "ProbEstimate",
    "std_normal_cdf",
    "std_normal_quantile",
    "mvn_rectangle_prob",
    "equicoordinate_quantile",
    "chi_square_quantile",
    "studentized_range_quantile",
    "QuantileConvergenceError",
]

_PROB_FLOOR = 1e-300
_PROB_CEIL = float(np.nextafter(1.0, 0.0))


class QuantileConvergenceError(RuntimeError):
    """Raised when a quantile search cannot reach its probability tolerance."""


@dataclass(frozen=True)
class QmcConfig:
    """Settings for the randomized quasi-Monte Carlo integrator."""

    points_per_shift: int = 4096
    shifts: int = 12
    seed: int = 20240801
    target_abs_error: float = 5e-4
    max_doublings: int = 6

    def __post_init__(self):
        if self.points_per_shift < 16:
            raise ValueError("points_per_shift must be at least 16")
        if self.shifts < 3:
            raise ValueError("need at least 3 shifts for an error estimate")
        if self.target_abs_error <= 0:
            raise ValueError("target_abs_error must be positive")


@dataclass(frozen=True)
class ProbEstimate:
    value: float
    std_error: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"probability {self.value} outside [0,1]")
        if not np.isfinite(self.std_error) or self.std_error < 0:
            raise ValueError("std_error must be finite and nonnegative")


def std_normal_cdf(z):
    """Standard normal CDF; tail-safe down to |z| ~ 37 (never exactly 0)."""
    return ndtr(z)


def std_normal_quantile(p):
    """Inverse standard normal CDF for 0 < p < 1."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr <= 0.0) or np.any(p_arr >= 1.0):
        raise ValueError("quantile requires 0 < p < 1")
    out = ndtri(p_arr)
    return float(out) if np.isscalar(p) or p_arr.ndim == 0 else out


def chi_square_quantile(df: int, p: float) -> float:
    """Inverse chi-square CDF with df degrees of freedom."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("quantile requires 0 < p < 1")
    return float(chdtri(df, 1.0 - p))


def _prepare_correlation(corr: np.ndarray) -> np.ndarray:
    """Validate and, if needed, repair a correlation matrix.

    Eigenvalues below -1e-10 are rejected; small negatives from estimation
    noise are clipped to zero and the diagonal renormalized to one.
    """
    r = np.asarray(corr, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("correlation matrix must be square")
    if np.max(np.abs(r - r.T)) > 1e-8:
        raise ValueError("correlation matrix must be symmetric")
    if np.max(np.abs(np.diag(r) - 1.0)) > 1e-8:
        raise ValueError("correlation matrix must have unit diagonal")
    r = 0.5 * (r + r.T)
    w = np.linalg.eigvalsh(r)
    if w[0] < -1e-10:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    if w[0] < 0.0:
        w2, v = np.linalg.eigh(r)
        r = (v * np.clip(w2, 0.0, None)) @ v.T
        d = np.sqrt(np.clip(np.diag(r), 1e-32, None))
        r = r / np.outer(d, d)
        r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return r


def _corr_cholesky(r: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(r)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(r)
        r2 = (v * np.clip(w, 1e-12, None)) @ v.T
        d = np.sqrt(np.diag(r2))
        r2 = r2 / np.outer(d, d)
        np.fill_diagonal(r2, 1.0)
        return np.linalg.cholesky(r2 + 1e-12 * np.eye(len(r2)))


def _reorder(lower, upper, r):
    """Permute variables by ascending univariate interval probability."""
    widths = ndtr(upper) - ndtr(lower)
    order = np.argsort(widths, kind="stable")
    return lower[order], upper[order], r[np.ix_(order, order)]


@functools.lru_cache(maxsize=32)
def _sobol_stack(dim: int, n: int, shifts: int, seed: int) -> np.ndarray:
    """(shifts, n, dim) stack of independently scrambled Sobol points."""
    out = np.empty((shifts, n, dim))
    for s in range(shifts):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(dim, n, s)))
        eng = qmc.Sobol(d=dim, scramble=True, seed=rng)
        out[s] = eng.random(n)
    out.setflags(write=False)
    return out


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def _conditioned_means(a, b, chol, points):
    """Sequential-conditioning estimate of the rectangle probability.

    `points` has shape (shifts, n, c-1); returns the per-shift means.  The
    shift axis is flattened so each conditioning stage runs one vectorized
    pass over every point of every shift.
    """
    c = len(a)
    shifts, n, _ = points.shape
    pts = points.reshape(shifts * n, -1)
    total = shifts * n
    lii = max(chol[0, 0], 1e-32)
    d = np.full(total, float(ndtr(a[0] / lii)))
    e = np.full(total, float(ndtr(b[0] / lii)))
    f = e - d
    y = np.empty((total, c - 1))
    for i in range(1, c):
        t = d + pts[:, i - 1] * (e - d)
        y[:, i - 1] = ndtri(np.clip(t, _PROB_FLOOR, _PROB_CEIL))
        mu = y[:, :i] @ chol[i, :i]
        lii = max(chol[i, i], 1e-32)
        with np.errstate(invalid="ignore"):
            d = ndtr((a[i] - mu) / lii)
            e = ndtr((b[i] - mu) / lii)
        f *= np.maximum(e - d, 0.0)
    return f.reshape(shifts, n).mean(axis=1)


def _estimate(a, b, chol, dim, n_points, shifts, seed):
    pts = _sobol_stack(max(dim, 1), n_points, shifts, seed)
    means = _conditioned_means(a, b, chol, pts)
    value = float(means.mean())
    se = float(means.std(ddof=1) / np.sqrt(shifts))
    return value, se


def mvn_rectangle_prob(lower, upper, corr, cfg: QmcConfig = QmcConfig()) -> ProbEstimate:
    """P(lower < Z < upper) for Z ~ N(0, corr), with a QMC standard error.

    Infinite bounds are allowed.  The result is a deterministic function of
    (lower, upper, corr, cfg).
    """
    a = np.asarray(lower, dtype=float).ravel()
    b = np.asarray(upper, dtype=float).ravel()
    r = _prepare_correlation(corr)
    c = len(r)
    if len(a) != c or len(b) != c:
        raise ValueError("bound lengths do not match the correlation dimension")
    if np.any(a >= b):
        raise ValueError("need lower < upper elementwise")

    a, b, r = _reorder(a, b, r)
    if c == 1:
        return ProbEstimate(float(np.clip(ndtr(b[0]) - ndtr(a[0]), 0.0, 1.0)), 0.0)
    chol = _corr_cholesky(r)

    n = _next_pow2(cfg.points_per_shift)
    value, se = _estimate(a, b, chol, c - 1, n, cfg.shifts, cfg.seed)
    for _ in range(cfg.max_doublings):
        if se <= cfg.target_abs_error:
            break
        n *= 2
        value, se = _estimate(a, b, chol, c - 1, n, cfg.shifts, cfg.seed)
    return ProbEstimate(float(np.clip(value, 0.0, 1.0)), se)


def equicoordinate_quantile(corr, alpha: float, cfg: QmcConfig = QmcConfig()) -> float:
    """Solve P(max_i |Z_i| <= q) = 1 - alpha for Z ~ N(0, corr).

    Bracketed between the two-sided univariate cutoff and the Bonferroni
    cutoff; the same QMC point set is reused for every trial q so the
    bracketing function is smooth in q.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    r = _prepare_correlation(corr)
    c = len(r)
    lo = float(ndtri(1.0 - alpha / 2.0))
    hi = float(ndtri(1.0 - alpha / (2.0 * c)))
    if c == 1:
        return lo
    chol = _corr_cholesky(r)
    target = 1.0 - alpha

    n = _next_pow2(cfg.points_per_shift)
    level = 0
    while True:
        pts = _sobol_stack(c - 1, n, cfg.shifts, cfg.seed)
        memo: dict[float, tuple[float, float]] = {}

        def prob(q: float) -> tuple[float, float]:
            got = memo.get(q)
            if got is None:
                bound = np.full(c, q)
                means = _conditioned_means(-bound, bound, chol, pts)
                got = (float(means.mean()), float(means.std(ddof=1) / np.sqrt(cfg.shifts)))
                memo[q] = got
            return got

        p_hi, se_hi = prob(hi)
        if se_hi <= cfg.target_abs_error or level >= cfg.max_doublings:
            break
        n *= 2
        level += 1

    # pick the x-tolerance so the induced probability error stays under the
    # 1e-3 band: |dP/dq| <= 2 c phi(q) <= 2 c phi(lo) over the bracket
    slope_bound = 2.0 * c * np.exp(-0.5 * lo * lo) / np.sqrt(2.0 * np.pi)
    xtol = float(np.clip(1e-3 / max(slope_bound, 1.0), 1e-5, 1e-3))
    g = lambda q: prob(q)[0] - target
    g_lo = g(lo)
    if g_lo >= 0.0:
        return lo
    if p_hi - target <= 0.0:
        return hi
    q_hat = optimize.brentq(g, lo, hi, xtol=xtol, rtol=1e-12, maxiter=200)
    p_hat, se_hat = prob(float(q_hat))
    if abs(p_hat - target) > 1e-3 + 2.0 * se_hat:
        raise QuantileConvergenceError(
            f"quantile search stalled: |P(q)-(1-alpha)| = {abs(p_hat - target):.2e} "
            f"with QMC std error {se_hat:.2e}"
        )
    return float(q_hat)


def _range_cdf(q: float, k: int) -> float:
    """P(range of k iid standard normals <= q)."""
    if q <= 0.0:
        return 0.0

    def integrand(z):
        return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi) * (ndtr(z) - ndtr(z - q)) ** (k - 1)

    val, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-11, epsrel=1e-11)
    return k * val


def studentized_range_quantile(k: int, alpha: float) -> float:
    """Infinite-degrees-of-freedom studentized range quantile q_{k;alpha}."""
    if k < 2:
        raise ValueError("need k >= 2 groups")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    target = 1.0 - alpha
    lo = np.sqrt(2.0) * float(ndtri(1.0 - alpha / 2.0))
    hi = np.sqrt(2.0) * float(ndtri(1.0 - alpha / (k * (k - 1))))
    if k == 2:
        return lo
    g = lambda q: _range_cdf(q, k) - target
    g_lo, g_hi = g(lo), g(hi)
    if g_lo > 0.0 or g_hi < 0.0:
        raise QuantileConvergenceError("range-quantile bracket failed")
    return float(optimize.brentq(g, lo, hi, xtol=1e-8, rtol=1e-12, maxiter=200))
