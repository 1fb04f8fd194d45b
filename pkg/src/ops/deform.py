"""
Modulated deformable convolution.

Every kernel sample point p_n of output pixel p_0 is displaced by a learned fractional offset
and scaled by a modulation scalar; the displaced position is read with bilinear interpolation
over the four integer neighbours. Neighbours outside the image read as zero, which is what a
zero-padded convolution sees, so zero offsets with unit modulation reduce to `conv2d`.

Offset channel 2n holds the vertical displacement of sample point n, channel 2n+1 the
horizontal one. Sample points are enumerated row-major over the E x E kernel window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from src.errors import DimensionError
from src.ops.conv import ConvSpec, check_conv_inputs, contract_backward, contract_columns
from src.tensor.tensor import Function, Tensor

_CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))


class BilinearGrid:
    """Corner indices and interpolation weights for positions `py`, `px` of shape [B, P]."""

    def __init__(self, py: np.ndarray, px: np.ndarray, height: int, width: int):
        self.height, self.width = height, width
        y0 = np.floor(py)
        x0 = np.floor(px)
        self.ly = py - y0
        self.lx = px - x0
        y0 = y0.astype(np.int64)
        x0 = x0.astype(np.int64)
        self.index = []
        self.valid = []
        for dy, dx in _CORNERS:
            yi, xi = y0 + dy, x0 + dx
            self.valid.append((yi >= 0) & (yi < height) & (xi >= 0) & (xi < width))
            self.index.append(np.clip(yi, 0, height - 1) * width + np.clip(xi, 0, width - 1))

    def weights(self) -> tuple[np.ndarray, ...]:
        ly, lx = self.ly, self.lx
        return ((1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx)

    def weight_slopes(self) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
        """d(weight)/d(py) and d(weight)/d(px) per corner."""
        ly, lx = self.ly, self.lx
        d_py = (-(1 - lx), -lx, 1 - lx, lx)
        d_px = (-(1 - ly), 1 - ly, -ly, ly)
        return d_py, d_px

    def gather(self, flat: np.ndarray) -> list[np.ndarray]:
        """Corner values [B, C, P] of `flat` [B, C, H*W]; out-of-range corners read 0."""
        return [
            np.take_along_axis(flat, idx[:, None, :], axis=2) * valid[:, None, :]
            for idx, valid in zip(self.index, self.valid)
        ]

    def sample(self, corners: list[np.ndarray]) -> np.ndarray:
        out = None
        for w, v in zip(self.weights(), corners):
            term = w[:, None, :] * v
            out = term if out is None else out + term
        return out

    def scatter(self, grad: np.ndarray) -> np.ndarray:
        """Adjoint of `sample` w.r.t. the image: [B, C, P] -> [B, C, H*W]."""
        B, C, P = grad.shape
        hw = self.height * self.width
        rows, cols, vals = [], [], []
        batch_rows = (np.arange(B) * hw)[:, None]
        batch_cols = (np.arange(B) * P)[:, None] + np.arange(P)[None, :]
        for w, idx, valid in zip(self.weights(), self.index, self.valid):
            rows.append((batch_rows + idx).ravel())
            cols.append(batch_cols.ravel())
            vals.append((w * valid).ravel())
        spread = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(B * hw, B * P),
            dtype=grad.dtype,
        )
        stacked = grad.transpose(0, 2, 1).reshape(B * P, C)
        out = np.asarray(spread @ stacked).reshape(B, hw, C)
        return np.ascontiguousarray(out.transpose(0, 2, 1))

    def position_grads(
        self, grad: np.ndarray, corners: list[np.ndarray]
    ) -> tuple[np.ndarray, np.ndarray]:
        """Gradients w.r.t. `py` and `px`, summed over channels."""
        d_py, d_px = self.weight_slopes()
        grad_py = np.zeros_like(self.ly)
        grad_px = np.zeros_like(self.lx)
        for sy, sx, v in zip(d_py, d_px, corners):
            gv = (grad * v).sum(axis=1)
            grad_py += sy * gv
            grad_px += sx * gv
        return grad_py, grad_px


class BilinearSample(Function):
    name = "bilinear_sample"

    def forward(self, x, py, px):
        C, H, W = x.shape
        self.shape = x.shape
        self.grid = BilinearGrid(py.reshape(1, 1), px.reshape(1, 1), H, W)
        self.corners = self.grid.gather(x.reshape(1, C, H * W))
        return self.grid.sample(self.corners).reshape(C)

    def backward(self, grad):
        g = grad.reshape(1, -1, 1)
        grad_x = self.grid.scatter(g).reshape(self.shape) if self.needs_grad[0] else None
        grad_py, grad_px = self.grid.position_grads(g, self.corners)
        return grad_x, grad_py.reshape(()), grad_px.reshape(())


def bilinear_sample(x: Tensor, py, px) -> Tensor:
    """Bilinear read of [C, H, W] at the fractional position (py, px); returns [C]."""
    if x.ndim != 3:
        raise DimensionError(f"bilinear_sample expects [C,H,W], got {x.shape}")
    py = py if isinstance(py, Tensor) else Tensor(py, dtype=x.dtype)
    px = px if isinstance(px, Tensor) else Tensor(px, dtype=x.dtype)
    if py.size != 1 or px.size != 1:
        raise DimensionError(f"bilinear_sample takes scalar coordinates, got {py.shape}, {px.shape}")
    return BilinearSample.apply(x, py.reshape(()), px.reshape(()))


@dataclass(frozen=True)
class DeformField:
    offsets: Tensor  # [B, 2E^2, H, W]
    modulation: Tensor  # [B, E^2, H, W], values in [0, 1]

    def check(self, x: Tensor, spec: ConvSpec) -> None:
        points = spec.kernel * spec.kernel
        B, _, H, W = x.shape
        if self.offsets.shape != (B, 2 * points, H, W):
            raise DimensionError(
                f"offsets {self.offsets.shape} do not match {(B, 2 * points, H, W)} "
                f"for a {spec.kernel}x{spec.kernel} kernel on input {x.shape}"
            )
        if self.modulation.shape != (B, points, H, W):
            raise DimensionError(
                f"modulation {self.modulation.shape} does not match {(B, points, H, W)}"
            )


def sample_positions(offsets: np.ndarray, kernel: int) -> tuple[np.ndarray, np.ndarray]:
    """Absolute sampling coordinates [B, E*E, H, W] for `offsets` [B, 2E*E, H, W]."""
    _, _, H, W = offsets.shape
    pad = (kernel - 1) // 2
    dy, dx = np.divmod(np.arange(kernel * kernel), kernel)
    base_y = (np.arange(H)[None, :, None] + (dy - pad)[:, None, None]).astype(offsets.dtype)
    base_x = (np.arange(W)[None, None, :] + (dx - pad)[:, None, None]).astype(offsets.dtype)
    return base_y + offsets[:, 0::2], base_x + offsets[:, 1::2]


class DeformConv2d(Function):
    name = "deform_conv2d"

    def forward(self, x, offsets, modulation, weight, bias, groups):
        B, C, H, W = x.shape
        self.kernel = weight.shape[-1]
        points = self.kernel * self.kernel
        self.shape, self.groups, self.weight, self.modulation = x.shape, groups, weight, modulation

        py, px = sample_positions(offsets, self.kernel)
        self.grid = BilinearGrid(py.reshape(B, -1), px.reshape(B, -1), H, W)
        self.corners = self.grid.gather(x.reshape(B, C, H * W))
        self.cols = self.grid.sample(self.corners).reshape(B, C, points, H, W)
        self.mcols = self.cols * modulation[:, None]
        return contract_columns(self.mcols, weight, groups) + bias[None, :, None, None]

    def backward(self, grad):
        B, C, H, W = self.shape
        points = self.kernel * self.kernel
        grad_w, grad_mcols = contract_backward(self.mcols, self.weight, grad, self.groups)
        grad_mod = (grad_mcols * self.cols).sum(axis=1)
        grad_cols = (grad_mcols * self.modulation[:, None]).reshape(B, C, points * H * W)

        grad_x = None
        if self.needs_grad[0]:
            grad_x = self.grid.scatter(grad_cols).reshape(self.shape)
        grad_py, grad_px = self.grid.position_grads(grad_cols, self.corners)
        grad_off = np.empty((B, 2 * points, H, W), dtype=grad.dtype)
        grad_off[:, 0::2] = grad_py.reshape(B, points, H, W)
        grad_off[:, 1::2] = grad_px.reshape(B, points, H, W)
        return grad_x, grad_off, grad_mod, grad_w, grad.sum(axis=(0, 2, 3))


def deform_conv2d(
    x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor | None, field: DeformField
) -> Tensor:
    """Modulated deformable convolution; output [B, C', H, W] like `conv2d`."""
    bias = check_conv_inputs(x, spec, weight, bias)
    field.check(x, spec)
    return DeformConv2d.apply(
        x, field.offsets, field.modulation, weight, bias, groups=spec.groups
    )
