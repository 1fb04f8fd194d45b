"""
Dense tensors with reverse-mode differentiation.

A `Tensor` wraps a NumPy array. Tensors produced by a `Function` keep a reference to it
(`_ctx`), which in turn references the parent tensors, so the graph of a computation can be
swept backwards from a scalar root with `backward`.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from src.errors import ContractError, DimensionError, NumericError

_PRECISION: contextvars.ContextVar[np.dtype] = contextvars.ContextVar(
    "precision", default=np.dtype(np.float32)
)


def default_dtype() -> np.dtype:
    """Floating dtype of the computation running in the current context."""
    return _PRECISION.get()


@contextlib.contextmanager
def precision(dtype) -> Iterator[np.dtype]:
    """Selects the floating dtype for tensors created inside the block.

    float32 is used for training and inference, float64 for oracle and gradient checks.
    The setting is context-local, so concurrent computations do not see each other's choice.
    """
    token = _PRECISION.set(np.dtype(dtype))
    try:
        yield _PRECISION.get()
    finally:
        _PRECISION.reset(token)


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{where} produced non-finite values (shape {arr.shape})")


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on NumPy arrays and `backward`, which maps the gradient
    of the output to one gradient per parent (or None when that parent needs none).
    """

    name = "function"

    def __init__(self, *parents: Tensor):
        self.parents = parents
        self.needs_grad = tuple(p.requires_grad for p in parents)

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__}.forward")

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError(f"{type(self).__name__}.backward")

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        _check_finite(out, cls.name)
        requires_grad = any(fn.needs_grad)
        return Tensor._wrap(out, fn if requires_grad else None, requires_grad)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        """Sums out the axes that broadcasting expanded so `grad` matches `shape`."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """Dense N-dimensional real array, the value type of every operator."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype if dtype is not None else default_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._ctx: Function | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray, ctx: Function | None, requires_grad: bool) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out._ctx = ctx
        return out

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor._wrap(self.data, None, False)

    def _lift(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return other
        return Tensor._wrap(np.asarray(other, dtype=self.dtype), None, False)

    def __add__(self, other):
        return Add.apply(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Sub.apply(self, self._lift(other))

    def __rsub__(self, other):
        return Sub.apply(self._lift(other), self)

    def __mul__(self, other):
        return Mul.apply(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Div.apply(self, self._lift(other))

    def __rtruediv__(self, other):
        return Div.apply(self._lift(other), self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent: float):
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        from src.tensor.functional import matmul

        return matmul(self, self._lift(other))

    def __getitem__(self, key):
        return Slice.apply(self, key=key)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return Transpose.apply(self, axes=axes)

    @property
    def T(self) -> Tensor:
        return self.transpose()

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        axes = range(self.ndim) if axis is None else np.atleast_1d(axis)
        count = int(np.prod([self.shape[a] for a in axes])) if self.ndim else 1
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def sqrt(self) -> Tensor:
        return Sqrt.apply(self)

    def backward(self) -> None:
        backward(self)


def backward(
    root: Tensor,
    wrt: Mapping[str, Tensor] | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, np.ndarray]:
    """
    Reverse topological sweep from a scalar root.

    Every leaf that requires a gradient receives its total gradient in `.grad`. When `wrt` is
    given, returns the gradient of each named leaf, zeros for leaves the root does not use.
    `rng` permutes the order in which parents are visited (the result does not depend on it
    beyond floating-point associativity).
    """
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")

    order = _topological_order(root, rng)
    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaf_grads: dict[int, np.ndarray] = {}

    for node in reversed(order):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node._ctx is None:
            leaf_grads[id(node)] = grad
            node.grad = grad if node.grad is None else node.grad + grad
            continue

        parent_grads = node._ctx.backward(grad)
        for parent, parent_grad in zip(node._ctx.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            if parent_grad.shape != parent.shape:
                raise ContractError(
                    f"{node._ctx.name} returned gradient of shape {parent_grad.shape} "
                    f"for a parent of shape {parent.shape}"
                )
            _check_finite(parent_grad, f"{node._ctx.name} backward")
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    if wrt is None:
        return {}
    return {
        name: leaf_grads.get(id(t), np.zeros_like(t.data)) for name, t in sorted(wrt.items())
    }


def _topological_order(root: Tensor, rng: np.random.Generator | None) -> list[Tensor]:
    """Iterative post-order DFS over the differentiable part of the graph."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is None:
            continue
        parents = [p for p in node._ctx.parents if p.requires_grad]
        if rng is not None:
            parents = [parents[i] for i in rng.permutation(len(parents))]
        for parent in parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


# Elementwise arithmetic with broadcasting


class Add(Function):
    name = "add"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(grad, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return self.unbroadcast(grad, self.shapes[0]), self.unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        grad_a = self.unbroadcast(grad * self.b, self.a.shape) if self.needs_grad[0] else None
        grad_b = self.unbroadcast(grad * self.a, self.b.shape) if self.needs_grad[1] else None
        return grad_a, grad_b


class Div(Function):
    name = "div"

    def forward(self, a, b):
        if np.any(b == 0):
            raise NumericError(f"division by zero (divisor shape {b.shape})")
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        grad_a = self.unbroadcast(grad / self.b, self.a.shape) if self.needs_grad[0] else None
        grad_b = None
        if self.needs_grad[1]:
            grad_b = self.unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape)
        return grad_a, grad_b


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    name = "pow"

    def forward(self, a, exponent: float):
        self.a, self.exponent = a, exponent
        return a**exponent

    def backward(self, grad):
        return (grad * self.exponent * self.a ** (self.exponent - 1),)


class Sqrt(Function):
    name = "sqrt"

    def forward(self, a):
        if np.any(a < 0):
            raise NumericError("sqrt of a negative value")
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad):
        return (grad / (2 * self.out),)


# Shape manipulation


class Reshape(Function):
    name = "reshape"

    def forward(self, a, shape):
        self.in_shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError as exc:
            raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, a, axes):
        self.axes = tuple(axes)
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Slice(Function):
    name = "slice"

    def forward(self, a, key):
        self.in_shape, self.dtype, self.key = a.shape, a.dtype, key
        return np.array(a[key])

    def backward(self, grad):
        full = np.zeros(self.in_shape, dtype=self.dtype)
        np.add.at(full, self.key, grad)
        return (full,)


class Sum(Function):
    name = "sum"

    def forward(self, a, axis, keepdims):
        self.in_shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape),)
