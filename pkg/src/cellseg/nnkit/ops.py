"""Differentiable operators (forward + analytic backward).

All spatial tensors are (n, c, h, w) float64. Convolution is
cross-correlation; zero padding is chosen so a stride-1 dilation-d 3x3
convolution preserves spatial size (pad = d). Internally the convolutions
run in channels-last layout, which keeps the inner loops on contiguous
memory and inside BLAS.
"""

from __future__ import annotations

import numpy as np

from ..errors import PipelineError, ShapeError
from . import _kernels
from .autograd import Tensor

NORM_EPS = 1e-5


def _check4(x: Tensor, name: str) -> tuple[int, int, int, int]:
    if x.ndim != 4:
        raise ShapeError(f"{name}: expected a (n, c, h, w) tensor, got shape {x.shape}")
    return x.shape


# ---------------------------------------------------------------------------
# convolution


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    """2D cross-correlation with zero padding = dilation * (kh - 1) // 2."""
    n, c, h, wid = _check4(x, "conv2d")
    if w.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (out_c, in_c, kh, kw), got {w.shape}")
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if b.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({o},)")
    pad = dilation * (kh - 1) // 2
    oh = (h + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
    ow = (wid + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: {h}x{wid} input too small for kernel {kh}x{kw} "
            f"stride {stride} dilation {dilation}"
        )

    if (kh, kw) == (1, 1) and stride == 1:
        # pointwise convolution is a plain channel matmul
        x2 = np.ascontiguousarray(x.data).reshape(n, c, h * wid)
        w2 = w.data.reshape(o, c)
        out = np.matmul(w2, x2).reshape(n, o, h, wid)
        out += b.data[None, :, None, None]

        def vjp_pointwise(up):
            up2 = np.ascontiguousarray(up).reshape(n, o, h * wid)
            gx = np.matmul(w2.T, up2).reshape(n, c, h, wid)
            gw = np.tensordot(up2, x2, axes=([0, 2], [0, 2])).reshape(o, c, 1, 1)
            gb = up.sum(axis=(0, 2, 3))
            return gx, gw, gb

        return Tensor(out, (x, w, b), vjp_pointwise)

    # general path: channels-last padded copy + fused kernels
    xcl = _kernels.to_nhwc_pad(x.data, pad)
    wcl = np.ascontiguousarray(np.transpose(w.data, (2, 3, 1, 0)))  # (kh, kw, c, o)

    acc = _kernels.conv_forward(xcl, wcl, stride, dilation, oh, ow)
    acc += b.data
    out = _kernels.to_nchw_crop(acc, 0, oh, ow)

    def vjp(up):
        upcl = _kernels.to_nhwc_pad(up, 0)
        gx_cl, gw_cl = _kernels.conv_backward(xcl, wcl, upcl, stride, dilation)
        gx = _kernels.to_nchw_crop(gx_cl, pad, h, wid)
        gw = np.ascontiguousarray(np.transpose(gw_cl, (3, 2, 0, 1)))
        gb = up.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return Tensor(out, (x, w, b), vjp)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """2x2 stride-2 transposed convolution (doubles h and w).

    Kernel layout is (in_c, out_c, 2, 2); windows do not overlap at stride 2.
    """
    n, c, h, wid = _check4(x, "conv_transpose2d")
    if w.ndim != 4 or w.shape[2:] != (2, 2):
        raise ShapeError(f"conv_transpose2d: kernel must be (in_c, out_c, 2, 2), got {w.shape}")
    ci, o = w.shape[0], w.shape[1]
    if ci != c:
        raise ShapeError(f"conv_transpose2d: input has {c} channels, kernel expects {ci}")
    if b.shape != (o,):
        raise ShapeError(f"conv_transpose2d: bias shape {b.shape} != ({o},)")

    # non-overlapping 2x2 stride-2 windows: one channel matmul per window cell
    x2 = np.ascontiguousarray(x.data).reshape(n, c, h * wid)
    out = np.empty((n, o, 2 * h, 2 * wid))
    for i in range(2):
        for j in range(2):
            out[:, :, i::2, j::2] = np.matmul(
                w.data[:, :, i, j].T, x2
            ).reshape(n, o, h, wid)
    out += b.data[None, :, None, None]

    def vjp(up):
        gx2 = np.zeros((n, c, h * wid))
        gw = np.empty_like(w.data)
        for i in range(2):
            for j in range(2):
                u2 = np.ascontiguousarray(up[:, :, i::2, j::2]).reshape(n, o, h * wid)
                gx2 += np.matmul(w.data[:, :, i, j], u2)
                gw[:, :, i, j] = np.tensordot(x2, u2, axes=([0, 2], [0, 2]))
        gb = up.sum(axis=(0, 2, 3))
        return gx2.reshape(n, c, h, wid), gw, gb

    return Tensor(out, (x, w, b), vjp)


# ---------------------------------------------------------------------------
# elementwise / pooling / shuffling


def relu(x: Tensor) -> Tensor:
    y, mask = _kernels.relu_forward(x.data)
    return Tensor(y, (x,), lambda up: (up * mask,))


def maxpool2(x: Tensor) -> Tensor:
    """2x2 non-overlapping max pooling; ties route to the first cell in
    row-major window order."""
    n, c, h, w = _check4(x, "maxpool2")
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    out, idx = _kernels.maxpool_forward(x.data)
    return Tensor(out, (x,), lambda up: (_kernels.maxpool_backward(up, idx, h, w),))


def pixelshuffle(x: Tensor) -> Tensor:
    """Channel-to-space shuffle with upscale factor 2:
    output[co, 2y+dy, 2x+dx] = input[co*4 + dy*2 + dx, y, x]."""
    n, c, h, w = _check4(x, "pixelshuffle")
    if c % 4:
        raise ShapeError(f"pixelshuffle: channels must be divisible by 4, got {c}")
    c4 = c // 4
    out = (
        x.data.reshape(n, c4, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c4, 2 * h, 2 * w)
    )

    def vjp(up):
        gx = up.reshape(n, c4, h, 2, w, 2).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w)
        return (np.ascontiguousarray(gx),)

    return Tensor(np.ascontiguousarray(out), (x,), vjp)


def pixelshuffle_inverse(x: Tensor) -> Tensor:
    """Exact inverse of pixelshuffle (space-to-channel)."""
    n, c, h, w = _check4(x, "pixelshuffle_inverse")
    if h % 2 or w % 2:
        raise ShapeError("pixelshuffle_inverse: spatial dims must be even")
    h2, w2 = h // 2, w // 2
    out = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 3, 5, 2, 4).reshape(n, 4 * c, h2, w2)

    def vjp(up):
        gx = up.reshape(n, c, 2, 2, h2, w2).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h, w)
        return (np.ascontiguousarray(gx),)

    return Tensor(np.ascontiguousarray(out), (x,), vjp)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    na, ca, ha, wa = _check4(a, "concat_channels")
    nb, cb, hb, wb = _check4(b, "concat_channels")
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} vs {b.shape}")
    out = np.concatenate([a.data, b.data], axis=1)
    return Tensor(out, (a, b), lambda up: (up[:, :ca], up[:, ca:]))


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool over (h, w), keeping singleton spatial dims."""
    n, c, h, w = _check4(x, "spatial_mean")
    out = x.data.mean(axis=(2, 3), keepdims=True)
    scale = 1.0 / (h * w)
    return Tensor(out, (x,), lambda up: (np.broadcast_to(up * scale, x.shape).copy(),))


def spatial_broadcast(x: Tensor, h: int, w: int) -> Tensor:
    """Broadcast a (n, c, 1, 1) tensor to (n, c, h, w)."""
    n, c, hx, wx = _check4(x, "spatial_broadcast")
    if (hx, wx) != (1, 1):
        raise ShapeError(f"spatial_broadcast: expected (n, c, 1, 1), got {x.shape}")
    out = np.broadcast_to(x.data, (n, c, h, w)).copy()
    return Tensor(out, (x,), lambda up: (up.sum(axis=(2, 3), keepdims=True),))


# ---------------------------------------------------------------------------
# normalization


def group_norm(x: Tensor, scale: Tensor, shift: Tensor, groups: int, eps: float = NORM_EPS) -> Tensor:
    """Normalize per (sample, channel group), then per-channel affine."""
    n, c, h, w = _check4(x, "group_norm")
    if c % groups:
        raise ShapeError(f"group_norm: {c} channels not divisible by {groups} groups")
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError("group_norm: affine parameters must be per-channel")
    m = (c // groups) * h * w
    x2 = np.ascontiguousarray(x.data).reshape(n * groups, m)
    y2, inv = _kernels.norm_forward(x2, eps)
    y = y2.reshape(n, c, h, w)
    out = y * scale.data[None, :, None, None] + shift.data[None, :, None, None]

    def vjp(up):
        gshift = up.sum(axis=(0, 2, 3))
        gscale = (up * y).sum(axis=(0, 2, 3))
        dy2 = (up * scale.data[None, :, None, None]).reshape(n * groups, m)
        gx = _kernels.norm_backward(dy2, y2, inv)
        return gx.reshape(n, c, h, w), gscale, gshift

    return Tensor(out, (x, scale, shift), vjp)


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = NORM_EPS,
) -> Tensor:
    """Per-channel batch normalization.

    Train mode normalizes with minibatch statistics (biased variance) and
    updates the running buffers in place:
    running <- (1 - momentum) * running + momentum * batch. Eval mode
    normalizes with the running buffers, so its output matches train mode
    exactly when the buffers equal the batch statistics.
    """
    n, c, h, w = _check4(x, "batch_norm")
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError("batch_norm: affine parameters must be per-channel")
    if mode not in ("train", "eval"):
        raise PipelineError(f"batch_norm: unknown mode {mode!r}")
    sc = scale.data[None, :, None, None]
    sh = shift.data[None, :, None, None]
    if mode == "train":
        if n < 2:
            raise PipelineError("batch_norm: degenerate batch (need >= 2 samples in train mode)")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean[:] = (1.0 - momentum) * running_mean + momentum * mu
        running_var[:] = (1.0 - momentum) * running_var + momentum * var
        inv = 1.0 / np.sqrt(var + eps)
        y = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
        out = y * sc + sh

        def vjp(up):
            gshift = up.sum(axis=(0, 2, 3))
            gscale = (up * y).sum(axis=(0, 2, 3))
            dy = up * sc
            m = n * h * w
            gx = (
                dy
                - dy.mean(axis=(0, 2, 3), keepdims=True)
                - y * (dy * y).mean(axis=(0, 2, 3), keepdims=True)
            ) * inv[None, :, None, None]
            return gx, gscale, gshift

        return Tensor(out, (x, scale, shift), vjp)

    inv = 1.0 / np.sqrt(running_var + eps)
    y = (x.data - running_mean[None, :, None, None]) * inv[None, :, None, None]
    out = y * sc + sh

    def vjp_eval(up):
        gshift = up.sum(axis=(0, 2, 3))
        gscale = (up * y).sum(axis=(0, 2, 3))
        gx = up * sc * inv[None, :, None, None]
        return gx, gscale, gshift

    return Tensor(out, (x, scale, shift), vjp_eval)


# ---------------------------------------------------------------------------
# loss


class ClassWeights:
    """Per-class loss weights (background, boundary, cell)."""

    def __init__(self, background: float = 1.0, boundary: float = 10.0, cell: float = 5.0):
        if min(background, boundary, cell) < 0 or max(background, boundary, cell) <= 0:
            raise PipelineError("class weights must be non-negative with at least one positive")
        self.background = float(background)
        self.boundary = float(boundary)
        self.cell = float(cell)

    def as_array(self) -> np.ndarray:
        return np.array([self.background, self.boundary, self.cell])

    def __repr__(self):
        return f"ClassWeights({self.background}, {self.boundary}, {self.cell})"


def softmax_ce_loss_grad(
    scores: np.ndarray, target: np.ndarray, weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """Class-weighted softmax cross entropy.

    loss = mean over pixels of weights[class] * (-log softmax[class]); the
    divisor is the pixel count, not the weight sum. Returns the loss and its
    gradient with respect to the scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n, k, h, w = scores.shape
    target = np.asarray(target)
    if target.shape != (n, h, w):
        raise ShapeError(f"target shape {target.shape} != {(n, h, w)}")
    if target.min() < 0 or target.max() >= k:
        raise PipelineError(f"target classes must lie in [0, {k})")
    z = scores - scores.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_softmax = z - logsumexp
    wt = weights[target]  # (n, h, w)
    picked = np.take_along_axis(log_softmax, target[:, None], axis=1)[:, 0]
    n_pixels = target.size
    loss = float(-(wt * picked).sum() / n_pixels)
    grad = np.exp(log_softmax) * wt[:, None]
    n_idx = np.arange(n)[:, None, None]
    h_idx = np.arange(h)[None, :, None]
    w_idx = np.arange(w)[None, None, :]
    grad[n_idx, target, h_idx, w_idx] -= wt
    grad /= n_pixels
    return loss, grad


def weighted_ce(scores: Tensor, target: np.ndarray, weights) -> Tensor:
    """Weighted cross-entropy as a scalar tape node."""
    wvec = np.asarray(
        weights if not hasattr(weights, "as_array") else weights.as_array(), dtype=np.float64
    )
    if wvec.shape != (scores.shape[1],):
        raise ShapeError(f"need one weight per class, got {wvec.shape}")
    if wvec.min() < 0 or wvec.max() <= 0:
        raise PipelineError("class weights must be non-negative with at least one positive")
    loss, grad = softmax_ce_loss_grad(scores.data, target, wvec)
    return Tensor(loss, (scores,), lambda up: (grad * up,))
