"""Numeric kernels for the forward and backward pass.

All activations are batched ``N x H x W x C`` float64 arrays.  Convolution
builds an explicit patch matrix and multiplies it with the reshaped kernel,
so a 1x1 convolution is exactly one matrix product.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_side(h: int, k: int, stride: int, pad: int) -> int:
    return (h + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Patches of shape ``(N, H', W', k, k, C)``; taps outside the input read as zero."""
    n, h, w, c = x.shape
    oh, ow = out_side(h, k, stride, pad), out_side(w, k, stride, pad)
    if oh < 1 or ow < 1:
        raise ValueError(f"kernel {k} with pad {pad} does not fit a {h}x{w} input")
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # N, h', w', C, k, k
    win = win[:, : (oh - 1) * stride + 1: stride, : (ow - 1) * stride + 1: stride]
    return win.transpose(0, 1, 2, 4, 5, 3)


def col2im(cols: np.ndarray, x_shape: tuple, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to the input."""
    n, h, w, c = x_shape
    _, oh, ow, k, _, _ = cols.shape
    dx = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    for i in range(k):
        for j in range(k):
            dx[:, i: i + (oh - 1) * stride + 1: stride,
               j: j + (ow - 1) * stride + 1: stride] += cols[:, :, :, i, j, :]
    return dx[:, pad: pad + h, pad: pad + w] if pad else dx


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
           stride: int = 1, pad: int = 0, groups: int = 1) -> np.ndarray:
    """Grouped convolution with a ``D x D x S/g x T`` kernel."""
    y, _ = conv2d_fwd(x, w, b, stride, pad, groups)
    return y


def conv2d_fwd(x, w, b=None, stride=1, pad=0, groups=1):
    n, h, wd, c = x.shape
    k, k2, cg, t = w.shape
    if k != k2:
        raise ValueError(f"kernel must be square, got {w.shape}")
    if c != cg * groups or t % groups:
        raise ValueError(f"kernel {w.shape} with {groups} groups does not match {c} input channels")
    tg = t // groups
    cols = im2col(x, k, stride, pad)
    _, oh, ow = cols.shape[:3]
    y = np.empty((n, oh, ow, t))
    mats = []
    for g in range(groups):
        patch = np.ascontiguousarray(cols[..., g * cg:(g + 1) * cg]).reshape(n * oh * ow, k * k * cg)
        wg = w[..., g * tg:(g + 1) * tg].reshape(k * k * cg, tg)
        y[..., g * tg:(g + 1) * tg] = (patch @ wg).reshape(n, oh, ow, tg)
        mats.append(patch)
    if b is not None:
        y += b
    return y, (x.shape, mats, (oh, ow))


def conv2d_bwd(dy, cache, w, stride=1, pad=0, groups=1, need_dx=True):
    """Gradients ``(dx, dw, db)`` of :func:`conv2d_fwd`."""
    x_shape, mats, (oh, ow) = cache
    n = x_shape[0]
    k, _, cg, t = w.shape
    tg = t // groups
    dw = np.empty_like(w)
    dcols = np.empty((n, oh, ow, k, k, cg * groups)) if need_dx else None
    for g in range(groups):
        dyg = dy[..., g * tg:(g + 1) * tg].reshape(-1, tg)
        dw[..., g * tg:(g + 1) * tg] = (mats[g].T @ dyg).reshape(k, k, cg, tg)
        if need_dx:
            wg = w[..., g * tg:(g + 1) * tg].reshape(k * k * cg, tg)
            dcols[..., g * cg:(g + 1) * cg] = (dyg @ wg.T).reshape(n, oh, ow, k, k, cg)
    db = dy.sum(axis=(0, 1, 2))
    dx = col2im(dcols, x_shape, stride, pad) if need_dx else None
    return dx, dw, db


def _pool_windows(x, window, stride, pad, ceil_mode, fill):
    n, h, w, c = x.shape

    def side(length):
        span = length + 2 * pad - window
        if not ceil_mode:
            return span // stride + 1
        out = -(-span // stride) + 1
        if (out - 1) * stride >= length + pad:
            out -= 1
        return out

    oh, ow = side(h), side(w)
    extra_h = max((oh - 1) * stride + window - (h + 2 * pad), 0)
    extra_w = max((ow - 1) * stride + window - (w + 2 * pad), 0)
    xp = np.pad(x, ((0, 0), (pad, pad + extra_h), (pad, pad + extra_w), (0, 0)),
                constant_values=fill)
    win = sliding_window_view(xp, (window, window), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1: stride, : (ow - 1) * stride + 1: stride]
    return win, xp.shape, (oh, ow), (extra_h, extra_w)


def maxpool_fwd(x, window, stride, pad=0, ceil_mode=False):
    win, xp_shape, (oh, ow), _ = _pool_windows(x, window, stride, pad, ceil_mode, -np.inf)
    flat = win.reshape(*win.shape[:4], window * window)
    arg = np.argmax(flat, axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return y, (x.shape, xp_shape, arg)


def maxpool_bwd(dy, cache, window, stride, pad=0):
    x_shape, xp_shape, arg = cache
    n, oh, ow, c = dy.shape
    dxp = np.zeros(xp_shape)
    di, dj = np.divmod(arg, window)
    ni, hi, wi, ci = np.indices(dy.shape, sparse=False)
    np.add.at(dxp, (ni, hi * stride + di, wi * stride + dj, ci), dy)
    h, w = x_shape[1:3]
    return dxp[:, pad: pad + h, pad: pad + w]


def avgpool_fwd(x, window, stride, pad=0, ceil_mode=False):
    """Average over each window; zero padding counts, overhang past it does not."""
    win, xp_shape, (oh, ow), (eh, ew) = _pool_windows(x, window, stride, pad, ceil_mode, 0.0)
    mask = np.zeros(xp_shape[1:3])
    mask[: xp_shape[1] - eh, : xp_shape[2] - ew] = 1.0
    mwin = sliding_window_view(mask, (window, window))
    counts = mwin[: (oh - 1) * stride + 1: stride, : (ow - 1) * stride + 1: stride].sum(axis=(2, 3))
    y = win.sum(axis=(4, 5)) / counts[None, :, :, None]
    return y, (x.shape, xp_shape, counts)


def avgpool_bwd(dy, cache, window, stride, pad=0):
    x_shape, xp_shape, counts = cache
    g = dy / counts[None, :, :, None]
    dxp = np.zeros(xp_shape)
    oh, ow = dy.shape[1:3]
    for i in range(window):
        for j in range(window):
            dxp[:, i: i + (oh - 1) * stride + 1: stride, j: j + (ow - 1) * stride + 1: stride] += g
    h, w = x_shape[1:3]
    return dxp[:, pad: pad + h, pad: pad + w]


def softmax_cross_entropy(scores: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of ``N x K`` scores and its gradient."""
    z = scores - scores.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = scores.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
