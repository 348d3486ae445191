"""Mode-n matricization, folding and mode-n products for dense tensors.

Tensors are plain float64 numpy arrays (row-major).  Modes are numpy axes,
so the "mode-3" (input channel) axis of a ``D x D x S x T`` kernel is
``mode=2`` here.

Unfolding follows the usual survey convention: the mode-n fibres become
the columns of the matrix and the remaining modes are ordered with the
lowest-numbered mode varying fastest.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def as_tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Build a float64 tensor, optionally from flat row-major data."""
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(n) for n in shape)
        if any(n < 1 for n in shape):
            raise ValueError(f"extents must be >= 1, got {shape}")
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{arr.size} values do not fill shape {shape}")
        arr = arr.reshape(shape)
    if arr.ndim < 1:
        raise ValueError("tensor order must be >= 1")
    return arr


def _check_mode(ndim: int, mode: int) -> int:
    if not 0 <= mode < ndim:
        raise ValueError(f"mode {mode} out of range for an order-{ndim} tensor")
    return mode


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization, shape ``(t.shape[mode], prod(rest))``."""
    t = np.asarray(t, dtype=np.float64)
    _check_mode(t.ndim, mode)
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def fold(m: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    m = np.asarray(m, dtype=np.float64)
    shape = tuple(int(n) for n in shape)
    _check_mode(len(shape), mode)
    if m.ndim != 2:
        raise ValueError("fold expects a matrix")
    rest = shape[:mode] + shape[mode + 1:]
    if m.shape != (shape[mode], int(np.prod(rest, dtype=np.int64))):
        raise ValueError(
            f"matrix of shape {m.shape} cannot fold to {shape} at mode {mode}")
    full = np.reshape(m, (shape[mode],) + rest, order="F")
    return np.ascontiguousarray(np.moveaxis(full, 0, mode))


def mode_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Mode-n product ``t x_n m``; the extent at ``mode`` becomes ``m.shape[0]``."""
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    _check_mode(t.ndim, mode)
    if m.ndim != 2 or m.shape[1] != t.shape[mode]:
        raise ValueError(
            f"matrix {m.shape} incompatible with extent {t.shape[mode]} at mode {mode}")
    out = np.tensordot(m, t, axes=([1], [mode]))
    return np.ascontiguousarray(np.moveaxis(out, 0, mode))


def multi_mode_product(t: np.ndarray, matrices, transpose: bool = False) -> np.ndarray:
    """Apply a mode product for every non-``None`` entry of ``matrices``.

    With ``transpose=True`` each matrix is applied transposed, which is how
    a core is projected out of a tensor with orthonormal factors.
    """
    out = np.asarray(t, dtype=np.float64)
    if len(matrices) != out.ndim:
        raise ValueError("need one (possibly None) matrix per mode")
    for mode, m in enumerate(matrices):
        if m is None:
            continue
        out = mode_product(out, m.T if transpose else m, mode)
    return out
