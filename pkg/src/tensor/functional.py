"""Named differentiable operations built on the tensor core."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import special

from src.errors import ContractError, DimensionError
from src.tensor.tensor import Function, Tensor


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad):
        grad_a = np.matmul(grad, np.swapaxes(self.b, -1, -2)) if self.needs_grad[0] else None
        grad_b = np.matmul(np.swapaxes(self.a, -1, -2), grad) if self.needs_grad[1] else None
        return grad_a, grad_b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading (batch) axes must be equal."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul needs matrices of equal rank, got {a.shape} and {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return MatMul.apply(a, b)


class SoftmaxRows(Function):
    name = "softmax_rows"

    def forward(self, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max-subtraction."""
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ContractError(f"softmax_rows needs a non-empty last axis, got shape {x.shape}")
    return SoftmaxRows.apply(x)


class PopulationVariance(Function):
    name = "population_variance"

    def forward(self, x, axis, keepdims):
        self.axis, self.keepdims = axis, keepdims
        self.count = x.size if axis is None else int(np.prod([x.shape[a] for a in axis]))
        self.centered = x - x.mean(axis=axis, keepdims=True)
        return np.asarray((self.centered**2).mean(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (grad * (2.0 / self.count) * self.centered,)


def population_variance(x: Tensor, axis: Sequence[int] | None = None, keepdims: bool = False):
    """Mean squared deviation from the mean (divisor = element count).

    With `axis=None` the result is a scalar over every element.
    """
    if x.size < 1:
        raise ContractError("population_variance needs at least one element")
    axis = None if axis is None else tuple(a % x.ndim for a in axis)
    return PopulationVariance.apply(x, axis=axis, keepdims=keepdims)


class ReLU(Function):
    name = "relu"

    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, np.zeros((), dtype=x.dtype))

    def backward(self, grad):
        return (grad * self.mask,)


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, x):
        self.out = special.expit(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1 - self.out),)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays, axis):
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.bounds, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat along axis {axis}: {ref} vs {t.shape}")
    return Concat.apply(*tensors, axis=axis % len(ref))


def split(x: Tensor, sections: int, axis: int = 1) -> list[Tensor]:
    """Splits `x` into `sections` equal slices along `axis`."""
    extent = x.shape[axis]
    if extent % sections:
        raise DimensionError(f"cannot split extent {extent} into {sections} equal parts")
    step = extent // sections
    index = [slice(None)] * x.ndim
    parts = []
    for i in range(sections):
        index[axis] = slice(i * step, (i + 1) * step)
        parts.append(x[tuple(index)])
    return parts
