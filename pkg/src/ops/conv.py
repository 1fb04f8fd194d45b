"""
Grouped 2-D cross-correlation with "same" zero padding and stride 1.

Both the standard and the deformable convolution contract a column tensor of shape
[B, C, E*E, H, W] against the kernel with `contract_columns`, so the deformable path with
zero offsets and unit modulation reproduces this one bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.errors import DimensionError, ParameterError
from src.tensor.tensor import Function, Tensor


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    groups: int = 1
    stride: int = 1
    padding: int | None = None

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ParameterError(f"kernel edge must be odd, got {self.kernel}")
        if self.groups < 1 or self.in_channels % self.groups or self.out_channels % self.groups:
            raise ParameterError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )
        if self.stride != 1:
            raise ParameterError(f"only stride 1 is supported, got {self.stride}")
        same = (self.kernel - 1) // 2
        if self.padding is None:
            object.__setattr__(self, "padding", same)
        elif self.padding != same:
            raise ParameterError(f"only 'same' padding {same} is supported, got {self.padding}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    @property
    def bias_shape(self) -> tuple[int]:
        return (self.out_channels,)

    @property
    def fan_in(self) -> int:
        return (self.in_channels // self.groups) * self.kernel * self.kernel


def im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """[B, C, H, W] -> contiguous [B, C, E*E, H, W] with cols[..., i*E+j, h, w] = x_pad[h+i, w+j]."""
    pad = (kernel - 1) // 2
    B, C, H, W = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    return np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)).reshape(
        B, C, kernel * kernel, H, W
    )


def col2im(cols: np.ndarray, kernel: int, height: int, width: int) -> np.ndarray:
    """Adjoint of `im2col`: scatters [B, C, E*E, H, W] back onto [B, C, H, W]."""
    pad = (kernel - 1) // 2
    B, C = cols.shape[:2]
    padded = np.zeros((B, C, height + 2 * pad, width + 2 * pad), dtype=cols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            padded[:, :, i : i + height, j : j + width] += cols[:, :, i * kernel + j]
    return padded[:, :, pad : pad + height, pad : pad + width]


def contract_columns(cols: np.ndarray, weight: np.ndarray, groups: int) -> np.ndarray:
    """[B, C, K, H, W] x [C', C/g, E, E] -> [B, C', H, W] per channel group."""
    B, C, K, H, W = cols.shape
    c_out = weight.shape[0]
    grouped = cols.reshape(B, groups, C // groups, K, H, W)
    kernel = weight.reshape(groups, c_out // groups, C // groups, K)
    out = np.einsum("bgckhw,gock->bgohw", grouped, kernel, optimize=True)
    return out.reshape(B, c_out, H, W)


def contract_backward(
    cols: np.ndarray, weight: np.ndarray, grad: np.ndarray, groups: int, need_cols: bool = True
) -> tuple[np.ndarray, np.ndarray | None]:
    """Gradients of `contract_columns` w.r.t. the kernel and (optionally) the columns."""
    B, C, K, H, W = cols.shape
    c_out = weight.shape[0]
    grouped = cols.reshape(B, groups, C // groups, K, H, W)
    kernel = weight.reshape(groups, c_out // groups, C // groups, K)
    grad_g = grad.reshape(B, groups, c_out // groups, H, W)
    grad_w = np.einsum("bgckhw,bgohw->gock", grouped, grad_g, optimize=True).reshape(weight.shape)
    grad_cols = None
    if need_cols:
        grad_cols = np.einsum("bgohw,gock->bgckhw", grad_g, kernel, optimize=True)
        grad_cols = grad_cols.reshape(B, C, K, H, W)
    return grad_w, grad_cols


class Conv2d(Function):
    name = "conv2d"

    def forward(self, x, weight, bias, groups):
        self.kernel = weight.shape[-1]
        self.groups = groups
        self.shape = x.shape
        self.cols = im2col(x, self.kernel)
        self.weight = weight
        return contract_columns(self.cols, weight, groups) + bias[None, :, None, None]

    def backward(self, grad):
        _, _, H, W = self.shape
        grad_w, grad_cols = contract_backward(
            self.cols, self.weight, grad, self.groups, need_cols=self.needs_grad[0]
        )
        grad_x = col2im(grad_cols, self.kernel, H, W) if self.needs_grad[0] else None
        return grad_x, grad_w, grad.sum(axis=(0, 2, 3))


def check_conv_inputs(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None) -> Tensor:
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise DimensionError(
            f"conv input {x.shape} does not have {spec.in_channels} channels in [B,C,H,W] layout"
        )
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise DimensionError(f"conv input has an empty spatial extent: {x.shape}")
    if weight.shape != spec.weight_shape:
        raise DimensionError(f"conv weight {weight.shape} does not match {spec.weight_shape}")
    if bias is None:
        return Tensor(np.zeros(spec.bias_shape), dtype=x.dtype)
    if bias.shape != spec.bias_shape:
        raise DimensionError(f"conv bias {bias.shape} does not match {spec.bias_shape}")
    return bias


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of [B, C, H, W] with zero padding (E-1)/2; spatial size preserved."""
    bias = check_conv_inputs(x, spec, weight, bias)
    return Conv2d.apply(x, weight, bias, groups=spec.groups)
