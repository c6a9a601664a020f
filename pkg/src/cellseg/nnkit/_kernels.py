"""Low-level convolution kernels.

The math lives here in two interchangeable implementations: vectorized
pure-numpy (the reference) and numba-jitted fused loops (used when numba
imports cleanly, several times faster on the channels-last layout). Both
compute plain cross-correlation on zero-padded, channels-last arrays;
conv2d in ops.py handles padding, layout, and the autodiff wiring.

Set CELLSEG_NO_NUMBA=1 to force the numpy reference implementation.
"""

from __future__ import annotations

import os

import numpy as np

_USE_NUMBA = False
if not os.environ.get("CELLSEG_NO_NUMBA"):
    try:
        from numba import njit, prange

        _USE_NUMBA = True
    except ImportError:  # pragma: no cover
        pass

_BLAS_LIMIT = None
if _USE_NUMBA:
    # BLAS worker threads spin-wait and starve the jit kernels on small
    # machines; the pipeline's matmuls are too skinny to profit from them.
    try:
        import threadpoolctl

        _BLAS_LIMIT = threadpoolctl.threadpool_limits(limits=1, user_api="blas")
    except Exception:  # pragma: no cover
        pass


# ---------------------------------------------------------------------------
# numpy reference


def _fwd_numpy(xp, w, stride, dilation, oh, ow):
    """xp (n, ph, pw, c) padded; w (kh, kw, c, o); returns (n, oh, ow, o)."""
    n = xp.shape[0]
    kh, kw, _, o = w.shape
    acc = np.zeros((n, oh, ow, o))
    for i in range(kh):
        for j in range(kw):
            xs = xp[
                :,
                i * dilation : i * dilation + stride * oh : stride,
                j * dilation : j * dilation + stride * ow : stride,
                :,
            ]
            acc += xs @ w[i, j]
    return acc


def _bwd_numpy(xp, w, up, stride, dilation):
    """Returns (grad_xp, grad_w) for the padded input and kernel."""
    kh, kw, _, _ = w.shape
    oh, ow = up.shape[1], up.shape[2]
    gx = np.zeros_like(xp)
    gw = np.empty_like(w)
    for i in range(kh):
        for j in range(kw):
            rows = slice(i * dilation, i * dilation + stride * oh, stride)
            cols = slice(j * dilation, j * dilation + stride * ow, stride)
            gw[i, j] = np.tensordot(xp[:, rows, cols, :], up, axes=([0, 1, 2], [0, 1, 2]))
            gx[:, rows, cols, :] += up @ w[i, j].T
    return gx, gw


def _to_nhwc_pad_numpy(x, pad):
    n, c, h, w = x.shape
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    out[:, pad : pad + h, pad : pad + w, :] = np.moveaxis(x, 1, 3)
    return out


def _to_nchw_crop_numpy(a, pad, h, w):
    return np.ascontiguousarray(np.moveaxis(a[:, pad : pad + h, pad : pad + w, :], 3, 1))


if _USE_NUMBA:

    @njit(cache=True, parallel=True, fastmath=True)
    def _nhwc_pad_jit(x, out, pad):  # pragma: no cover - exercised via conv2d
        n, c, h, w = x.shape
        for nn in prange(n):
            for y in range(h):
                for cc in range(c):
                    xrow = x[nn, cc, y]
                    for xx in range(w):
                        out[nn, y + pad, xx + pad, cc] = xrow[xx]

    @njit(cache=True, parallel=True, fastmath=True)
    def _nchw_crop_jit(a, out, pad):  # pragma: no cover
        n, c, h, w = out.shape
        for nn in prange(n):
            for y in range(h):
                for cc in range(c):
                    orow = out[nn, cc, y]
                    for xx in range(w):
                        orow[xx] = a[nn, y + pad, xx + pad, cc]

    @njit(cache=True, parallel=True, fastmath=True)
    def _fwd_jit(xp, w, stride, dilation, out):  # pragma: no cover - exercised via conv2d
        n, ph, pw, c = xp.shape
        kh, kw, _, o = w.shape
        _, oh, ow, _ = out.shape
        for nn in prange(n):
            for y in range(oh):
                for x in range(ow):
                    acc = np.zeros(o)
                    for i in range(kh):
                        yy = y * stride + i * dilation
                        for j in range(kw):
                            xrow = xp[nn, yy, x * stride + j * dilation]
                            for cc in range(c):
                                xv = xrow[cc]
                                wrow = w[i, j, cc]
                                for oo in range(o):
                                    acc[oo] += xv * wrow[oo]
                    for oo in range(o):
                        out[nn, y, x, oo] = acc[oo]

    @njit(cache=True, parallel=True, fastmath=True)
    def _bwd_jit(xp, w, up, stride, dilation, gx, gw_parts):  # pragma: no cover
        n, ph, pw, c = xp.shape
        kh, kw, _, o = w.shape
        _, oh, ow, _ = up.shape
        for nn in prange(n):
            for y in range(oh):
                for x in range(ow):
                    uprow = up[nn, y, x]
                    for i in range(kh):
                        yy = y * stride + i * dilation
                        for j in range(kw):
                            xx = x * stride + j * dilation
                            xrow = xp[nn, yy, xx]
                            gxrow = gx[nn, yy, xx]
                            for cc in range(c):
                                xv = xrow[cc]
                                wrow = w[i, j, cc]
                                gwrow = gw_parts[nn, i, j, cc]
                                acc = 0.0
                                for oo in range(o):
                                    u = uprow[oo]
                                    gwrow[oo] += xv * u
                                    acc += u * wrow[oo]
                                gxrow[cc] += acc


def to_nhwc_pad(x: np.ndarray, pad: int) -> np.ndarray:
    """(n, c, h, w) -> zero-padded (n, h+2p, w+2p, c), both contiguous."""
    if _USE_NUMBA:
        n, c, h, w = x.shape
        out = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
        _nhwc_pad_jit(np.ascontiguousarray(x), out, pad)
        return out
    return _to_nhwc_pad_numpy(x, pad)


def to_nchw_crop(a: np.ndarray, pad: int, h: int, w: int) -> np.ndarray:
    """Padded (n, ph, pw, c) -> cropped contiguous (n, c, h, w)."""
    if _USE_NUMBA:
        out = np.empty((a.shape[0], a.shape[3], h, w))
        _nchw_crop_jit(a, out, pad)
        return out
    return _to_nchw_crop_numpy(a, pad, h, w)


def conv_forward(xp: np.ndarray, w: np.ndarray, stride: int, dilation: int,
                 oh: int, ow: int) -> np.ndarray:
    """Cross-correlation on a padded channels-last input (bias not included)."""
    if _USE_NUMBA:
        out = np.empty((xp.shape[0], oh, ow, w.shape[3]))
        _fwd_jit(xp, w, stride, dilation, out)
        return out
    return _fwd_numpy(xp, w, stride, dilation, oh, ow)


def conv_backward(xp: np.ndarray, w: np.ndarray, up: np.ndarray, stride: int,
                  dilation: int) -> tuple[np.ndarray, np.ndarray]:
    """(grad wrt padded input, grad wrt kernel) given upstream (n, oh, ow, o)."""
    if _USE_NUMBA:
        gx = np.zeros_like(xp)
        gw_parts = np.zeros((xp.shape[0],) + w.shape)
        _bwd_jit(xp, w, up, stride, dilation, gx, gw_parts)
        return gx, gw_parts.sum(axis=0)
    return _bwd_numpy(xp, w, up, stride, dilation)


# ---------------------------------------------------------------------------
# group/batch norm core: per-row mean/var + normalize, and the matching
# backward, over x viewed as (rows, m)


def norm_forward(x2: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """x2 (rows, m) -> (normalized y, 1/std per row)."""
    if _USE_NUMBA:
        y = np.empty_like(x2)
        inv = np.empty(x2.shape[0])
        _norm_fwd_jit(x2, eps, y, inv)
        return y, inv
    mu = x2.mean(axis=1, keepdims=True)
    var = x2.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return (x2 - mu) * inv, inv[:, 0]


def norm_backward(dy2: np.ndarray, y2: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """Gradient through row normalization: per row
    gx = (dy - mean(dy) - y * mean(dy * y)) * inv."""
    if _USE_NUMBA:
        gx = np.empty_like(dy2)
        _norm_bwd_jit(dy2, y2, inv, gx)
        return gx
    return (
        dy2 - dy2.mean(axis=1, keepdims=True) - y2 * (dy2 * y2).mean(axis=1, keepdims=True)
    ) * inv[:, None]


if _USE_NUMBA:

    @njit(cache=True, parallel=True, fastmath=True)
    def _norm_fwd_jit(x2, eps, y, inv):  # pragma: no cover
        rows, m = x2.shape
        for r in prange(rows):
            s = 0.0
            for i in range(m):
                s += x2[r, i]
            mu = s / m
            v = 0.0
            for i in range(m):
                d = x2[r, i] - mu
                v += d * d
            iv = 1.0 / np.sqrt(v / m + eps)
            inv[r] = iv
            for i in range(m):
                y[r, i] = (x2[r, i] - mu) * iv

    @njit(cache=True, parallel=True, fastmath=True)
    def _norm_bwd_jit(dy2, y2, inv, gx):  # pragma: no cover
        rows, m = dy2.shape
        for r in prange(rows):
            s1 = 0.0
            s2 = 0.0
            for i in range(m):
                s1 += dy2[r, i]
                s2 += dy2[r, i] * y2[r, i]
            m1 = s1 / m
            m2 = s2 / m
            iv = inv[r]
            for i in range(m):
                gx[r, i] = (dy2[r, i] - m1 - y2[r, i] * m2) * iv


# ---------------------------------------------------------------------------
# elementwise / pooling


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(max(x, 0), mask) with mask as float64 for the backward multiply."""
    if _USE_NUMBA:
        x = np.ascontiguousarray(x)
        y = np.empty_like(x)
        mask = np.empty_like(x)
        _relu_jit(x.ravel(), y.ravel(), mask.ravel())
        return y, mask
    mask = (x > 0).astype(np.float64)
    return x * mask, mask


def maxpool_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling; returns (pooled, argmax index in row-major window order)."""
    n, c, h, w = x.shape
    if _USE_NUMBA:
        out = np.empty((n, c, h // 2, w // 2))
        idx = np.empty((n, c, h // 2, w // 2), dtype=np.uint8)
        _maxpool_fwd_jit(np.ascontiguousarray(x), out, idx)
        return out, idx
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = np.ascontiguousarray(windows).reshape(n, c, h // 2, w // 2, 4)
    idx = windows.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(windows, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, idx


def maxpool_backward(up: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    n, c = up.shape[0], up.shape[1]
    if _USE_NUMBA:
        gx = np.zeros((n, c, h, w))
        _maxpool_bwd_jit(np.ascontiguousarray(up), idx, gx)
        return gx
    g = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(g, idx[..., None].astype(np.intp), up[..., None], axis=-1)
    g = g.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(g).reshape(n, c, h, w)


if _USE_NUMBA:

    @njit(cache=True, parallel=True, fastmath=True)
    def _relu_jit(x, y, mask):  # pragma: no cover
        for i in prange(x.size):
            v = x[i]
            if v > 0.0:
                y[i] = v
                mask[i] = 1.0
            else:
                y[i] = 0.0
                mask[i] = 0.0

    @njit(cache=True, parallel=True, fastmath=True)
    def _maxpool_fwd_jit(x, out, idx):  # pragma: no cover
        n, c, h2, w2 = out.shape
        for nn in prange(n):
            for cc in range(c):
                for y in range(h2):
                    r0 = x[nn, cc, 2 * y]
                    r1 = x[nn, cc, 2 * y + 1]
                    for xx in range(w2):
                        best = r0[2 * xx]
                        k = 0
                        if r0[2 * xx + 1] > best:
                            best = r0[2 * xx + 1]
                            k = 1
                        if r1[2 * xx] > best:
                            best = r1[2 * xx]
                            k = 2
                        if r1[2 * xx + 1] > best:
                            best = r1[2 * xx + 1]
                            k = 3
                        out[nn, cc, y, xx] = best
                        idx[nn, cc, y, xx] = k

    @njit(cache=True, parallel=True, fastmath=True)
    def _maxpool_bwd_jit(up, idx, gx):  # pragma: no cover
        n, c, h2, w2 = up.shape
        for nn in prange(n):
            for cc in range(c):
                for y in range(h2):
                    for xx in range(w2):
                        k = idx[nn, cc, y, xx]
                        gx[nn, cc, 2 * y + k // 2, 2 * xx + k % 2] = up[nn, cc, y, xx]


def using_numba() -> bool:
    return _USE_NUMBA
