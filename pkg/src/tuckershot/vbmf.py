"""Rank estimation with the global analytic empirical-VB matrix factorization.

For an ``L x M`` observation (``L <= M``, transposed otherwise) with noise
variance ``sigma2``, the analytic solution keeps an observed singular value
``gamma`` iff

    gamma**2 > M * sigma2 * (1 + tau) * (1 + alpha / tau),
    alpha = L / M,  tau = 2.5129 * sqrt(alpha),

and shrinks each kept value to

    gamma/2 * (1 - (L+M) sigma2/gamma**2
               + sqrt((1 - (L+M) sigma2/gamma**2)**2 - 4 L M sigma2**2/gamma**4)).

When the noise variance is unknown it is chosen by minimising the
empirical-VB free energy over a log-spaced bracket: a coarse scan followed
by golden-section refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import singular_values

TAU_COEF = 2.5129
EPS_FLOOR = 1e-10
ZERO_LIKE = 1e-300
COARSE_POINTS = 100
GOLDEN_TOL = 1e-8


@dataclass(frozen=True)
class VbmfResult:
    rank: int
    noise_variance: float
    shrunken_values: np.ndarray
    threshold: float


def _tau_bar(alpha: float) -> float:
    return TAU_COEF * math.sqrt(alpha)


def _x_bar(alpha: float) -> float:
    tb = _tau_bar(alpha)
    return (1.0 + tb) * (1.0 + alpha / tb)


def retention_threshold(L: int, M: int, sigma2: float) -> float:
    """Cutoff on observed singular values; ``L <= M``."""
    return math.sqrt(M * sigma2 * _x_bar(L / M))


def _tau(x: np.ndarray, alpha: float) -> np.ndarray:
    b = x - (1.0 + alpha)
    return 0.5 * (b + np.sqrt(np.maximum(b * b - 4.0 * alpha, 0.0)))


def free_energy(sigma2: float, s: np.ndarray, L: int, M: int, total_energy: float) -> float:
    """Empirical-VB free energy as a function of the noise variance.

    ``s`` are the observed singular values and ``total_energy`` is the
    squared Frobenius norm of the observation.  Terms that do not depend on
    ``sigma2`` are dropped, so zero singular values are harmless.
    """
    alpha = L / M
    x = s * s / (M * sigma2)
    big = x[x > _x_bar(alpha)]
    tau = _tau(big, alpha)
    kept = np.sum(np.log1p(tau) + alpha * np.log1p(tau / alpha) - tau)
    return float(L * math.log(sigma2) + total_energy / (M * sigma2) + kept)


def _shrink(gamma: np.ndarray, L: int, M: int, sigma2: float) -> np.ndarray:
    g2 = gamma * gamma
    a = 1.0 - (L + M) * sigma2 / g2
    disc = np.maximum(a * a - 4.0 * L * M * sigma2 * sigma2 / (g2 * g2), 0.0)
    return 0.5 * gamma * (a + np.sqrt(disc))


def _prepare(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 2:
        raise ValueError(f"VBMF needs a matrix with both sides >= 2, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if m.shape[0] > m.shape[1]:
        m = m.T
    return m


def _result(s: np.ndarray, L: int, M: int, sigma2: float) -> VbmfResult:
    thr = retention_threshold(L, M, sigma2)
    kept = s[s > thr]
    return VbmfResult(int(kept.size), float(sigma2), _shrink(kept, L, M, sigma2), thr)


def noise_bracket(s: np.ndarray, M: int) -> tuple[float, float]:
    """Search interval for the noise variance."""
    pos = s[s > 0]
    lo = float(pos[-1]) ** 2 / M * EPS_FLOOR
    hi = float(np.mean(s)) ** 2
    return lo, max(hi, lo * 10)


def minimize_free_energy(s: np.ndarray, L: int, M: int, total_energy: float,
                         bracket: tuple[float, float] | None = None) -> float:
    """Minimise :func:`free_energy` over ``log(sigma2)``.

    A coarse log-spaced scan picks the best cell, then golden-section search
    refines inside the two neighbouring cells.
    """
    lo, hi = bracket if bracket is not None else noise_bracket(s, M)
    f = lambda t: free_energy(math.exp(t), s, L, M, total_energy)  # noqa: E731
    grid = np.linspace(math.log(lo), math.log(hi), COARSE_POINTS)
    vals = [f(t) for t in grid]
    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, COARSE_POINTS - 1)]

    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    # tolerance on sigma2 is relative, i.e. absolute on log(sigma2)
    while b - a > GOLDEN_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    best = 0.5 * (a + b)
    # keep the scan's best point if refinement landed somewhere worse
    if vals[i] < f(best):
        best = grid[i]
    return math.exp(best)


def vbmf_estimate(m) -> VbmfResult:
    """Estimate rank and noise variance of ``m`` with empirical VBMF."""
    m = _prepare(m)
    L, M = m.shape
    if np.max(np.abs(m)) < ZERO_LIKE:
        return VbmfResult(0, float(np.finfo(float).tiny), np.zeros(0), 0.0)
    # normalise so the search is independent of the overall scale
    scale = float(np.max(np.abs(m)))
    s = singular_values(m / scale)
    if s[0] == 0:
        return VbmfResult(0, float(np.finfo(float).tiny), np.zeros(0), 0.0)
    total = float(np.sum(s * s))
    sigma2 = minimize_free_energy(s, L, M, total)
    res = _result(s, L, M, sigma2)
    return VbmfResult(res.rank, res.noise_variance * scale**2,
                      res.shrunken_values * scale, res.threshold * scale)


def vbmf_estimate_with_sigma(m, sigma2: float) -> VbmfResult:
    """VBMF rank at a known noise variance."""
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    m = _prepare(m)
    L, M = m.shape
    return _result(singular_values(m), L, M, float(sigma2))
