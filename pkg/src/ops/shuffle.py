"""Element permutations: pixel shuffle / unshuffle and channel shuffle."""

from __future__ import annotations

import numpy as np

from src.errors import DimensionError, ParameterError
from src.tensor.tensor import Function, Tensor


class PixelShuffle(Function):
    name = "pixel_shuffle"

    def forward(self, x, scale):
        B, C, H, W = x.shape
        self.scale, self.shape = scale, x.shape
        c = C // (scale * scale)
        out = x.reshape(B, c, scale, scale, H, W).transpose(0, 1, 4, 2, 5, 3)
        return out.reshape(B, c, H * scale, W * scale)

    def backward(self, grad):
        return (_unshuffle(grad, self.scale),)


class PixelUnshuffle(Function):
    name = "pixel_unshuffle"

    def forward(self, x, scale):
        self.scale = scale
        return _unshuffle(x, scale)

    def backward(self, grad):
        B, C, H, W = grad.shape
        s = self.scale
        c = C // (s * s)
        out = grad.reshape(B, c, s, s, H, W).transpose(0, 1, 4, 2, 5, 3)
        return (out.reshape(B, c, H * s, W * s),)


def _unshuffle(x: np.ndarray, scale: int) -> np.ndarray:
    B, c, H, W = x.shape
    h, w = H // scale, W // scale
    out = x.reshape(B, c, h, scale, w, scale).transpose(0, 1, 3, 5, 2, 4)
    return out.reshape(B, c * scale * scale, h, w)


def pixel_shuffle(x: Tensor, scale: int) -> Tensor:
    """[B, c*S^2, H, W] -> [B, c, S*H, S*W] with out[b,k,S*i+dy,S*j+dx] = in[b,k*S^2+dy*S+dx,i,j]."""
    if scale < 1:
        raise ParameterError(f"upscale factor must be positive, got {scale}")
    if x.ndim != 4 or x.shape[1] % (scale * scale):
        raise DimensionError(f"pixel_shuffle: channels of {x.shape} not divisible by {scale}^2")
    return PixelShuffle.apply(x, scale=scale)


def pixel_unshuffle(x: Tensor, scale: int) -> Tensor:
    """Inverse of `pixel_shuffle`: [B, c, S*H, S*W] -> [B, c*S^2, H, W]."""
    if scale < 1:
        raise ParameterError(f"downscale factor must be positive, got {scale}")
    if x.ndim != 4 or x.shape[2] % scale or x.shape[3] % scale:
        raise DimensionError(f"pixel_unshuffle: spatial extent of {x.shape} not divisible by {scale}")
    return PixelUnshuffle.apply(x, scale=scale)


class ChannelShuffle(Function):
    name = "channel_shuffle"

    def forward(self, x, groups):
        B, C, H, W = x.shape
        self.groups = groups
        return x.reshape(B, groups, C // groups, H, W).transpose(0, 2, 1, 3, 4).reshape(x.shape)

    def backward(self, grad):
        B, C, H, W = grad.shape
        g = self.groups
        return (grad.reshape(B, C // g, g, H, W).transpose(0, 2, 1, 3, 4).reshape(grad.shape),)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Views channels as (g, C/g), transposes to (C/g, g) and flattens back."""
    if x.ndim != 4 or groups < 1 or x.shape[1] % groups:
        raise DimensionError(f"channel_shuffle: {groups} groups do not divide channels of {x.shape}")
    return ChannelShuffle.apply(x, groups=groups)
