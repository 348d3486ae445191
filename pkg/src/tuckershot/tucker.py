"""Tucker-1 / Tucker-2 decomposition of kernel tensors (HOSVD + HOOI).

Only the reconstruction error of the kernel itself is minimised; no data
or activations are involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .linalg import leading_left_vectors, truncated_svd
from .tensor import fold, multi_mode_product, unfold

DEFAULT_MAX_SWEEPS = 50
DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class DecompositionQuality:
    rel_error: float
    iterations: int
    fit_history: list = field(default_factory=list)


@dataclass(frozen=True)
class TuckerFactors:
    """Core plus one optional factor matrix per mode.

    A ``None`` factor means that mode was not decomposed and the core keeps
    the full extent there.
    """

    core: np.ndarray
    factors: tuple
    quality: Optional[DecompositionQuality] = None

    def __post_init__(self):
        if len(self.factors) != self.core.ndim:
            raise ValueError("need one factor slot per core mode")
        for mode, u in enumerate(self.factors):
            if u is not None and (u.ndim != 2 or u.shape[1] != self.core.shape[mode]):
                raise ValueError(
                    f"factor {mode} has shape {u.shape}, core extent is {self.core.shape[mode]}")

    @property
    def ranks(self) -> tuple:
        return tuple(self.core.shape)

    @property
    def shape(self) -> tuple:
        """Shape of the tensor this decomposition approximates."""
        return tuple(self.core.shape[n] if u is None else u.shape[0]
                     for n, u in enumerate(self.factors))

    @property
    def n_params(self) -> int:
        return int(self.core.size + sum(u.size for u in self.factors if u is not None))


def _normalize_ranks(shape: Sequence[int], ranks: Sequence[Optional[int]]) -> list:
    if len(ranks) != len(shape):
        raise ValueError(f"need {len(shape)} rank entries, got {len(ranks)}")
    out = []
    for mode, (n, r) in enumerate(zip(shape, ranks)):
        if r is None:
            out.append(None)
            continue
        r = int(r)
        if not 1 <= r <= n:
            raise ValueError(f"rank {r} at mode {mode} out of range 1..{n}")
        out.append(r)
    return out


def reconstruct(f: TuckerFactors) -> np.ndarray:
    """Contract the core with every present factor."""
    return multi_mode_product(f.core, list(f.factors))


def rel_error(k: np.ndarray, f: TuckerFactors) -> float:
    norm = np.linalg.norm(k)
    if norm == 0:
        return 0.0
    return float(np.linalg.norm(k - reconstruct(f)) / norm)


def _initial_factor(k: np.ndarray, mode: int, r: Optional[int]):
    if r is None:
        return None
    if r == k.shape[mode]:
        # any orthonormal basis is exact here; the identity also survives float32 storage
        return np.eye(r)
    return leading_left_vectors(unfold(k, mode), r)


def hosvd(k: np.ndarray, ranks: Sequence[Optional[int]]) -> TuckerFactors:
    """Truncated higher-order SVD: leading left singular vectors of each unfolding.

    A mode requested at full rank gets the identity factor.
    """
    k = np.asarray(k, dtype=np.float64)
    ranks = _normalize_ranks(k.shape, ranks)
    factors = [_initial_factor(k, n, r) for n, r in enumerate(ranks)]
    core = multi_mode_product(k, factors, transpose=True)
    return TuckerFactors(core, tuple(factors))


def hooi(k: np.ndarray, ranks: Sequence[Optional[int]],
         max_sweeps: int = DEFAULT_MAX_SWEEPS, tol: float = DEFAULT_TOL):
    """Higher-order orthogonal iteration started from :func:`hosvd`.

    Each sweep re-solves every decomposed mode with the others fixed.  Stops
    once the relative error changes by less than ``tol`` between sweeps.
    Returns ``(TuckerFactors, DecompositionQuality)``.
    """
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be >= 1")
    k = np.asarray(k, dtype=np.float64)
    ranks = _normalize_ranks(k.shape, ranks)
    current = hosvd(k, ranks)
    factors = list(current.factors)
    prev = rel_error(k, current)
    modes = [n for n, r in enumerate(ranks) if r is not None and r < k.shape[n]]
    history = []
    for _ in range(max_sweeps):
        for n in modes:
            others = [None if m == n else u for m, u in enumerate(factors)]
            y = multi_mode_product(k, others, transpose=True)
            factors[n] = leading_left_vectors(unfold(y, n), ranks[n])
        core = multi_mode_product(k, factors, transpose=True)
        current = TuckerFactors(core, tuple(factors))
        err = rel_error(k, current)
        history.append(err)
        if abs(prev - err) < tol:
            break
        prev = err
    quality = DecompositionQuality(history[-1], len(history), history)
    return TuckerFactors(current.core, current.factors, quality), quality


def tucker2_kernel(k: np.ndarray, r3: int, r4: int,
                   max_sweeps: int = DEFAULT_MAX_SWEEPS, tol: float = DEFAULT_TOL) -> TuckerFactors:
    """Decompose the channel modes of a ``D x D x S x T`` kernel, keep the spatial ones."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 4:
        raise ValueError(f"kernel must be 4-way, got shape {k.shape}")
    factors, _ = hooi(k, [None, None, r3, r4], max_sweeps=max_sweeps, tol=tol)
    return factors


def tucker1_kernel(k: np.ndarray, mode: int, r: int) -> TuckerFactors:
    """Single-mode Tucker, i.e. a truncated SVD of one unfolding."""
    k = np.asarray(k, dtype=np.float64)
    ranks = [None] * k.ndim
    ranks[mode] = r
    _normalize_ranks(k.shape, ranks)
    if r == k.shape[mode]:
        factors = [None] * k.ndim
        factors[mode] = np.eye(r)
        return TuckerFactors(k.copy(), tuple(factors), DecompositionQuality(0.0, 1, [0.0]))
    res = truncated_svd(unfold(k, mode), r)
    core_shape = list(k.shape)
    core_shape[mode] = r
    core = fold(res.s[:, None] * res.vt, mode, core_shape)
    factors = [None] * k.ndim
    factors[mode] = res.u
    f = TuckerFactors(core, tuple(factors))
    err = rel_error(k, f)
    return TuckerFactors(core, tuple(factors), DecompositionQuality(err, 1, [err]))
