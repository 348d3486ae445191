"""Dense SVD and symmetric eigendecomposition with deterministic conventions.

The heavy lifting is delegated to LAPACK through :mod:`numpy.linalg`; this
module pins down what the rest of the package relies on: descending
singular values, tiny values clamped to exactly zero, and a fixed sign
for every singular/eigen vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# singular values below CLAMP * s_max are set to zero
CLAMP = 1e-12


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray   # rows x k, orthonormal columns
    s: np.ndarray   # k values, descending, >= 0
    vt: np.ndarray  # k x cols, orthonormal rows

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.s))

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 1:
        raise ValueError(f"expected a non-empty matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def _fix_signs(u: np.ndarray, vt: np.ndarray | None = None):
    """Make the first nonzero entry of every column of ``u`` nonnegative."""
    nz = np.abs(u) > 0
    first = np.argmax(nz, axis=0)
    signs = np.sign(u[first, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs
    if vt is not None:
        vt = vt * signs[:, None]
    return u, vt


def _clamp(s: np.ndarray) -> np.ndarray:
    s = np.maximum(s, 0.0)
    if s.size and s[0] > 0:
        s = np.where(s < CLAMP * s[0], 0.0, s)
    return s


def svd(m) -> SvdResult:
    """Thin SVD with ``k = min(rows, cols)``."""
    m = _as_matrix(m)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    u, vt = _fix_signs(u, vt)
    return SvdResult(u, _clamp(s), vt)


def singular_values(m) -> np.ndarray:
    """Descending singular values only (cheaper than :func:`svd`)."""
    return _clamp(np.linalg.svd(_as_matrix(m), compute_uv=False))


def truncated_svd(m, k: int) -> SvdResult:
    """Top-``k`` singular triplets: the best rank-k Frobenius approximation."""
    m = _as_matrix(m)
    if not 1 <= k <= min(m.shape):
        raise ValueError(f"rank {k} out of range for a {m.shape[0]}x{m.shape[1]} matrix")
    full = svd(m)
    return SvdResult(full.u[:, :k].copy(), full.s[:k].copy(), full.vt[:k].copy())


def leading_left_vectors(m, k: int) -> np.ndarray:
    """Top-``k`` left singular vectors of ``m``.

    For wide matrices this goes through the eigenvectors of the small
    ``m @ m.T`` Gram matrix, which is what tensor unfoldings look like.
    """
    m = _as_matrix(m)
    rows, cols = m.shape
    if not 1 <= k <= rows:
        raise ValueError(f"rank {k} out of range for {rows} rows")
    if cols >= 4 * rows:
        _, vecs = sym_eig(m @ m.T)
        return vecs[:, :k].copy()
    u, _, _ = np.linalg.svd(m, full_matrices=False)
    if k > u.shape[1]:
        # more requested vectors than columns: complete the basis
        u, _, _ = np.linalg.svd(m, full_matrices=True)
    u, _ = _fix_signs(u[:, :k])
    return u


def sym_eig(m, tol: float = 1e-10):
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix."""
    m = _as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"sym_eig needs a square matrix, got {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m - m.T)) > tol * scale:
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    vecs, _ = _fix_signs(vecs)
    return vals.copy(), np.ascontiguousarray(vecs)
