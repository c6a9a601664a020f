"""A small 2-stage U-Net assembled from the operator kit.

Encoder blocks are VGG-like (two 3x3 conv + norm + relu), channels double
whenever the spatial dimensions halve (8/16 encoder, 32 at the bottleneck
by default). Variant flags select the normalization (group vs batch), the
downsampling (max pooling vs strided 3x3 conv), the upsampling (2x2
transposed conv vs pixelshuffle), and an optional ASPP module wrapping the
bottleneck output. Bridges concatenate encoder features into the decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..errors import ConfigError, ShapeError
from . import ops
from .autograd import Tensor

ASPP_RATES = (1, 6, 12, 18)


@dataclass
class UNetConfig:
    in_channels: int = 1
    n_classes: int = 3
    base_channels: int = 8
    depth: int = 2  # number of downsampling stages
    norm: str = "group"  # "group" or "batch"
    groups: int = 8
    down: str = "maxpool"  # "maxpool" or "convstride"
    up: str = "upconv"  # "upconv" or "pixelshuffle"
    aspp: bool = False
    aspp_path_channels: int = 0  # 0 -> bottleneck_channels // 2
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.norm not in ("group", "batch"):
            raise ConfigError(f"unknown norm {self.norm!r}")
        if self.down not in ("maxpool", "convstride"):
            raise ConfigError(f"unknown downsampling {self.down!r}")
        if self.up not in ("upconv", "pixelshuffle"):
            raise ConfigError(f"unknown upsampling {self.up!r}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")

    @property
    def encoder_channels(self) -> list[int]:
        return [self.base_channels * (1 << i) for i in range(self.depth)]

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * (1 << self.depth)


class MiniUNet:
    """Parameter bookkeeping plus the forward wiring of the network."""

    def __init__(self, cfg: UNetConfig | None = None):
        self.cfg = cfg or UNetConfig()
        self._shapes: dict[str, tuple[int, ...]] = {}
        self._buffer_shapes: dict[str, tuple[int, ...]] = {}
        self._register_all()

    # -- parameter registry

    def _conv(self, name: str, in_c: int, out_c: int, k: int = 3):
        self._shapes[f"{name}.w"] = (out_c, in_c, k, k)
        self._shapes[f"{name}.b"] = (out_c,)

    def _tconv(self, name: str, in_c: int, out_c: int):
        self._shapes[f"{name}.w"] = (in_c, out_c, 2, 2)
        self._shapes[f"{name}.b"] = (out_c,)

    def _norm(self, name: str, channels: int):
        self._shapes[f"{name}.scale"] = (channels,)
        self._shapes[f"{name}.shift"] = (channels,)
        if self.cfg.norm == "batch":
            self._buffer_shapes[f"{name}.mean"] = (channels,)
            self._buffer_shapes[f"{name}.var"] = (channels,)

    def _block(self, name: str, in_c: int, out_c: int):
        self._conv(f"{name}.conv1", in_c, out_c)
        self._norm(f"{name}.norm1", out_c)
        self._conv(f"{name}.conv2", out_c, out_c)
        self._norm(f"{name}.norm2", out_c)

    def _register_all(self):
        cfg = self.cfg
        enc = cfg.encoder_channels
        in_c = cfg.in_channels
        for i, ch in enumerate(enc):
            self._block(f"enc{i}", in_c, ch)
            if cfg.down == "convstride":
                self._conv(f"down{i}.conv", ch, ch)
            in_c = ch
        bott = cfg.bottleneck_channels
        self._block("bott", in_c, bott)
        if cfg.aspp:
            path = cfg.aspp_path_channels or bott // 2
            for rate in ASPP_RATES:
                self._conv(f"aspp.rate{rate}", bott, path)
            self._conv("aspp.gap", bott, path, k=1)
            self._conv("aspp.fuse", path * (len(ASPP_RATES) + 1), bott, k=1)
        skip = bott
        for i in reversed(range(cfg.depth)):
            ch = enc[i]
            if cfg.up == "upconv":
                self._tconv(f"up{i}.conv", skip, ch)
                dec_in = ch + ch
            else:  # pixelshuffle: 2C channels at half size become C/2 at full size
                dec_in = skip // 4 + ch
            self._block(f"dec{i}", dec_in, ch)
            skip = ch
        self._conv("head.conv", skip, cfg.n_classes, k=1)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return dict(self._shapes)

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        """He-initialized kernels, zero biases, identity affine."""
        params = {}
        for name, shape in self._shapes.items():
            if name.endswith(".w"):
                gen = rngmod.stream(seed, "init", name)
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else int(shape[0])
                if name.startswith("up") and len(shape) == 4:
                    fan_in = shape[0] * shape[2] * shape[3]
                params[name] = gen.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            elif name.endswith(".scale"):
                params[name] = np.ones(shape)
            else:  # biases and shifts
                params[name] = np.zeros(shape)
        return params

    def init_buffers(self) -> dict[str, np.ndarray]:
        buffers = {}
        for name, shape in self._buffer_shapes.items():
            buffers[name] = np.zeros(shape) if name.endswith(".mean") else np.ones(shape)
        return buffers

    # -- forward

    def forward(
        self,
        x: np.ndarray,
        params: dict[str, np.ndarray],
        buffers: dict[str, np.ndarray] | None = None,
        mode: str = "train",
    ) -> tuple[Tensor, dict[str, Tensor]]:
        """Run the network; returns (scores, parameter leaves).

        After scores-derived loss .backward(), each leaf's .grad holds the
        parameter gradient.
        """
        cfg = self.cfg
        buffers = buffers if buffers is not None else {}
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"expected (n, {cfg.in_channels}, h, w) input, got {x.shape}")
        div = 1 << cfg.depth
        if x.shape[2] % div or x.shape[3] % div:
            raise ShapeError(
                f"spatial dims {x.shape[2]}x{x.shape[3]} must be divisible by {div}"
            )
        missing = set(self._shapes) - set(params)
        if missing:
            raise ConfigError(f"missing parameters: {sorted(missing)[:5]}")

        leaves = {name: Tensor(params[name]) for name in self._shapes}

        def conv(name, t, stride=1, dilation=1):
            return ops.conv2d(t, leaves[f"{name}.w"], leaves[f"{name}.b"], stride, dilation)

        def norm(name, t):
            scale, shift = leaves[f"{name}.scale"], leaves[f"{name}.shift"]
            if cfg.norm == "group":
                return ops.group_norm(t, scale, shift, cfg.groups)
            return ops.batch_norm(
                t, scale, shift, buffers[f"{name}.mean"], buffers[f"{name}.var"],
                mode=mode, momentum=cfg.bn_momentum,
            )

        def block(name, t):
            t = ops.relu(norm(f"{name}.norm1", conv(f"{name}.conv1", t)))
            t = ops.relu(norm(f"{name}.norm2", conv(f"{name}.conv2", t)))
            return t

        t = Tensor(x)
        skips = []
        for i in range(cfg.depth):
            t = block(f"enc{i}", t)
            skips.append(t)
            if cfg.down == "maxpool":
                t = ops.maxpool2(t)
            else:
                t = conv(f"down{i}.conv", t, stride=2)
        t = block("bott", t)
        if cfg.aspp:
            t = self._aspp(t, leaves)
        for i in reversed(range(cfg.depth)):
            if cfg.up == "upconv":
                t = ops.conv_transpose2d(t, leaves[f"up{i}.conv.w"], leaves[f"up{i}.conv.b"])
            else:
                t = ops.pixelshuffle(t)
            t = ops.concat_channels(t, skips[i])
            t = block(f"dec{i}", t)
        scores = conv("head.conv", t)
        return scores, leaves

    def _aspp(self, t: Tensor, leaves: dict[str, Tensor]) -> Tensor:
        return _aspp_forward(t, leaves)


def _aspp_forward(x: Tensor, leaves: dict[str, Tensor]) -> Tensor:
    h, w = x.shape[2], x.shape[3]
    paths = []
    for rate in ASPP_RATES:
        c = ops.conv2d(x, leaves[f"aspp.rate{rate}.w"], leaves[f"aspp.rate{rate}.b"],
                       stride=1, dilation=rate)
        paths.append(ops.relu(c))
    pooled = ops.spatial_mean(x)
    pooled = ops.conv2d(pooled, leaves["aspp.gap.w"], leaves["aspp.gap.b"])
    paths.append(ops.spatial_broadcast(ops.relu(pooled), h, w))
    merged = paths[0]
    for p in paths[1:]:
        merged = ops.concat_channels(merged, p)
    return ops.conv2d(merged, leaves["aspp.fuse.w"], leaves["aspp.fuse.b"])


def aspp(x: Tensor, params: dict[str, np.ndarray]) -> tuple[Tensor, dict[str, Tensor]]:
    """Standalone ASPP: dilated 3x3 paths at rates 1/6/12/18 plus a pooled
    1x1 path, concatenated and fused by a 1x1 convolution.

    `params` uses the same naming as MiniUNet ("aspp.rateR.w", "aspp.gap.w",
    "aspp.fuse.w", plus matching ".b" entries); see aspp_param_shapes.
    Returns (output, parameter leaves) so callers can read gradients.
    """
    leaves = {name: Tensor(arr) for name, arr in params.items()}
    return _aspp_forward(x, leaves), leaves


def aspp_param_shapes(in_channels: int, path_channels: int, out_channels: int) -> dict:
    shapes = {}
    for rate in ASPP_RATES:
        shapes[f"aspp.rate{rate}.w"] = (path_channels, in_channels, 3, 3)
        shapes[f"aspp.rate{rate}.b"] = (path_channels,)
    shapes["aspp.gap.w"] = (path_channels, in_channels, 1, 1)
    shapes["aspp.gap.b"] = (path_channels,)
    shapes["aspp.fuse.w"] = (out_channels, path_channels * 5, 1, 1)
    shapes["aspp.fuse.b"] = (out_channels,)
    return shapes
