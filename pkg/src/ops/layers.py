"""Pooling, batch normalization, fully connected and dropout layers."""

from __future__ import annotations

from typing import Literal

import numpy as np

from src.errors import DimensionError, ParameterError
from src.tensor.functional import matmul
from src.tensor.tensor import Function, Tensor

Mode = Literal["train", "eval"]
MODES = ("train", "eval")


def check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")


def pooling_matrix(size: int, out: int, dtype) -> np.ndarray:
    """[out, size] averaging weights of the window [floor(i*size/out), ceil((i+1)*size/out))."""
    m = np.zeros((out, size), dtype=dtype)
    for i in range(out):
        start = (i * size) // out
        stop = -((-(i + 1) * size) // out)
        m[i, start:stop] = 1.0 / (stop - start)
    return m


class AdaptiveAvgPool(Function):
    name = "adaptive_avg_pool"

    def forward(self, x, oh, ow):
        _, _, H, W = x.shape
        self.ph = pooling_matrix(H, oh, x.dtype)
        self.pw = pooling_matrix(W, ow, x.dtype)
        return np.einsum("ih,bchw,jw->bcij", self.ph, x, self.pw, optimize=True)

    def backward(self, grad):
        return (np.einsum("ih,bcij,jw->bchw", self.ph, grad, self.pw, optimize=True),)


def adaptive_avg_pool(x: Tensor, oh: int, ow: int) -> Tensor:
    """Averages [B, C, H, W] down to [B, C, oh, ow]; never upsamples."""
    if x.ndim != 4:
        raise DimensionError(f"adaptive_avg_pool expects [B,C,H,W], got {x.shape}")
    if not (1 <= oh <= x.shape[2] and 1 <= ow <= x.shape[3]):
        raise DimensionError(f"cannot pool {x.shape[2]}x{x.shape[3]} to {oh}x{ow}")
    return AdaptiveAvgPool.apply(x, oh=oh, ow=ow)


def avg_pool(x: Tensor, window: int) -> Tensor:
    """Non-overlapping window x window average pooling."""
    if x.ndim != 4 or window < 1 or x.shape[2] % window or x.shape[3] % window:
        raise DimensionError(f"avg_pool window {window} does not tile {x.shape}")
    return adaptive_avg_pool(x, x.shape[2] // window, x.shape[3] // window)


class BatchNormTrain(Function):
    name = "batch_norm"

    def forward(self, x, gamma, beta, mean, var, eps):
        self.count = x.shape[0] * x.shape[2] * x.shape[3]
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mean[None, :, None, None]) * self.inv_std[None, :, None, None]
        self.gamma = gamma
        return gamma[None, :, None, None] * self.xhat + beta[None, :, None, None]

    def backward(self, grad):
        axes = (0, 2, 3)
        grad_gamma = (grad * self.xhat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        dxhat = grad * self.gamma[None, :, None, None]
        grad_x = (
            self.count * dxhat
            - dxhat.sum(axis=axes)[None, :, None, None]
            - self.xhat * (dxhat * self.xhat).sum(axis=axes)[None, :, None, None]
        ) * (self.inv_std / self.count)[None, :, None, None]
        return grad_x, grad_gamma, grad_beta


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: Mode,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> tuple[Tensor, tuple[np.ndarray, np.ndarray] | None]:
    """
    Per-channel normalization of [B, C, H, W].

    In train mode, normalizes with the batch's population statistics and returns the updated
    running statistics (momentum-weighted, population variance) alongside the output; the
    caller decides where they are stored. In eval mode, uses the running statistics and
    returns None in their place.
    """
    check_mode(mode)
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape} do not agree"
        )
    if mode == "eval":
        scale = gamma / Tensor(np.sqrt(running_var + eps), dtype=x.dtype)
        shift = beta - Tensor(running_mean, dtype=x.dtype) * scale
        return x * scale.reshape(1, -1, 1, 1) + shift.reshape(1, -1, 1, 1), None

    mean = x.data.mean(axis=(0, 2, 3))
    var = x.data.var(axis=(0, 2, 3))
    out = BatchNormTrain.apply(x, gamma, beta, mean=mean, var=var, eps=eps)
    new_mean = ((1 - momentum) * running_mean + momentum * mean).astype(running_mean.dtype)
    new_var = ((1 - momentum) * running_var + momentum * var).astype(running_var.dtype)
    return out, (new_mean, new_var)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map x @ W^T + b for x [B, d], W [d', d], b [d']."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    return matmul(x, weight.T) + bias


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, mode: Mode) -> Tensor:
    """Inverted dropout: zeroes elements with probability p, scales survivors by 1/(1-p)."""
    check_mode(mode)
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in train mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / np.asarray(1.0 - p, dtype=x.dtype)
    return x * Tensor(keep, dtype=x.dtype)
