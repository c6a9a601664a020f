"""Differentiable operator kit and the small U-Net built from it."""

from .autograd import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .ops import (
    ClassWeights,
    batch_norm,
    concat_channels,
    conv2d,
    conv_transpose2d,
    group_norm,
    maxpool2,
    pixelshuffle,
    pixelshuffle_inverse,
    relu,
    softmax_ce_loss_grad,
    spatial_broadcast,
    spatial_mean,
    weighted_ce,
)
from .unet import ASPP_RATES, MiniUNet, UNetConfig, aspp, aspp_param_shapes

__all__ = [
    "ASPP_RATES",
    "ClassWeights",
    "MiniUNet",
    "Tensor",
    "UNetConfig",
    "aspp",
    "aspp_param_shapes",
    "batch_norm",
    "concat_channels",
    "conv2d",
    "conv_transpose2d",
    "group_norm",
    "load_checkpoint",
    "maxpool2",
    "pixelshuffle",
    "pixelshuffle_inverse",
    "relu",
    "save_checkpoint",
    "softmax_ce_loss_grad",
    "spatial_broadcast",
    "spatial_mean",
    "weighted_ce",
]
