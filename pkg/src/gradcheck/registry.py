"""
Table of differentiable operators that the finite-difference harness knows how to drive.

Each entry names its inputs with default shapes, optionally conditions the random inputs
(away from kinks, into valid ranges), and maps input tensors to the op's output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.errors import UnknownOpError
from src.ops.conv import ConvSpec, conv2d
from src.ops.deform import DeformField, bilinear_sample, deform_conv2d
from src.ops.layers import adaptive_avg_pool, avg_pool, batch_norm, dropout, linear
from src.ops.shuffle import channel_shuffle, pixel_shuffle, pixel_unshuffle
from src.tensor.functional import matmul, population_variance, relu, sigmoid, softmax_rows
from src.tensor.tensor import Tensor
from src.training.loss import mse_loss

Inputs = dict[str, np.ndarray]
Shapes = dict[str, tuple[int, ...]]

# Name of the end-to-end check of the micro PBAN loss; handled by the harness itself.
E2E_OP = "pban_loss"

LATTICE_MARGIN = 0.1
MAX_EXTENT = 5


@dataclass(frozen=True)
class CheckableOp:
    name: str
    shapes: Shapes
    fn: Callable[[dict[str, Tensor]], Tensor]
    prepare: Callable[[Inputs, np.random.Generator], Inputs] | None = None
    sample_shapes: Callable[[np.random.Generator], Shapes] | None = None

    def inputs(self, rng: np.random.Generator, shapes: Shapes | None = None) -> Inputs:
        shapes = {**self.shapes, **(shapes or {})}
        data = {name: rng.standard_normal(shape) for name, shape in shapes.items()}
        return self.prepare(data, rng) if self.prepare else data

    def random_shapes(self, rng: np.random.Generator) -> Shapes:
        """Input shapes with every extent drawn from [1, MAX_EXTENT] under the op's constraints."""
        return self.sample_shapes(rng) if self.sample_shapes else dict(self.shapes)


def extent(rng: np.random.Generator, high: int = MAX_EXTENT) -> int:
    return int(rng.integers(1, high + 1))


def odd_kernel(rng: np.random.Generator, high: int = MAX_EXTENT) -> int:
    return int(rng.choice(np.arange(1, high + 1, 2)))


def off_lattice(shape: tuple[int, ...], rng: np.random.Generator, spread: int = 1) -> np.ndarray:
    """Random reals whose fractional part stays LATTICE_MARGIN away from every integer."""
    whole = rng.integers(-spread, spread + 1, size=shape)
    return whole + rng.uniform(LATTICE_MARGIN, 1.0 - LATTICE_MARGIN, size=shape)


def away_from_zero(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return np.where(x >= 0, 1.0, -1.0) * rng.uniform(LATTICE_MARGIN, 1.5, size=x.shape)


def _conv_spec(shapes_x: tuple, weight: tuple) -> ConvSpec:
    groups = shapes_x[1] // weight[1]
    return ConvSpec(shapes_x[1], weight[0], kernel=weight[-1], groups=groups)


def _conv(t):
    return conv2d(t["x"], _conv_spec(t["x"].shape, t["weight"].shape), t["weight"], t["bias"])


def _deform(t):
    spec = _conv_spec(t["x"].shape, t["weight"].shape)
    field = DeformField(t["offsets"], t["modulation"])
    return deform_conv2d(t["x"], spec, t["weight"], t["bias"], field)


def _prepare_deform(data: Inputs, rng: np.random.Generator) -> Inputs:
    data["offsets"] = off_lattice(data["offsets"].shape, rng)
    data["modulation"] = rng.uniform(0.0, 1.0, size=data["modulation"].shape)
    return data


def _prepare_bilinear(data: Inputs, rng: np.random.Generator) -> Inputs:
    _, H, W = data["x"].shape
    data["py"] = rng.integers(-1, H) + rng.uniform(LATTICE_MARGIN, 1.0 - LATTICE_MARGIN)
    data["px"] = rng.integers(-1, W) + rng.uniform(LATTICE_MARGIN, 1.0 - LATTICE_MARGIN)
    return data


def _prepare_relu(data: Inputs, rng: np.random.Generator) -> Inputs:
    data["x"] = away_from_zero(data["x"], rng)
    return data


def _batch_norm(t):
    C = t["x"].shape[1]
    out, _ = batch_norm(t["x"], t["gamma"], t["beta"], np.zeros(C), np.ones(C), "train")
    return out


def _dropout(t):
    # a fresh generator per call keeps the mask fixed across perturbed evaluations
    return dropout(t["x"], 0.5, np.random.default_rng(7), "train")


def _grouped_channels(rng: np.random.Generator) -> tuple[int, int, int]:
    """(in_channels, out_channels, groups) with groups dividing both, all within MAX_EXTENT."""
    c_in = extent(rng)
    groups = int(rng.choice([g for g in range(1, c_in + 1) if c_in % g == 0]))
    c_out = groups * extent(rng, MAX_EXTENT // groups)
    return c_in, c_out, groups


def _conv_shapes(rng: np.random.Generator) -> Shapes:
    c_in, c_out, groups = _grouped_channels(rng)
    k = odd_kernel(rng)
    return {
        "x": (extent(rng), c_in, extent(rng), extent(rng)),
        "weight": (c_out, c_in // groups, k, k),
        "bias": (c_out,),
    }


def _deform_shapes(rng: np.random.Generator) -> Shapes:
    # batch and kernel stay small: every offset coordinate costs two full evaluations
    c_in, c_out, groups = _grouped_channels(rng)
    k = odd_kernel(rng, 3)
    B, H, W = extent(rng, 2), extent(rng), extent(rng)
    return {
        "x": (B, c_in, H, W),
        "offsets": (B, 2 * k * k, H, W),
        "modulation": (B, k * k, H, W),
        "weight": (c_out, c_in // groups, k, k),
        "bias": (c_out,),
    }


def _matmul_shapes(rng: np.random.Generator) -> Shapes:
    m, k, n = extent(rng), extent(rng), extent(rng)
    return {"a": (m, k), "b": (k, n)}


def _linear_shapes(rng: np.random.Generator) -> Shapes:
    n, d_in, d_out = extent(rng), extent(rng), extent(rng)
    return {"x": (n, d_in), "weight": (d_out, d_in), "bias": (d_out,)}


def _mse_shapes(rng: np.random.Generator) -> Shapes:
    n = extent(rng)
    return {"pred": (n, 1), "mos": (n,)}


def _batch_norm_shapes(rng: np.random.Generator) -> Shapes:
    C = extent(rng)
    return {"x": (extent(rng), C, extent(rng), extent(rng)), "gamma": (C,), "beta": (C,)}


def _bilinear_shapes(rng: np.random.Generator) -> Shapes:
    return {"x": (extent(rng), extent(rng), extent(rng)), "py": (), "px": ()}


def _map(*dims: Callable[[np.random.Generator], int]) -> Callable[[np.random.Generator], Shapes]:
    """Sampler for a single input `x` whose extents come from `dims`."""
    return lambda rng: {"x": tuple(d(rng) for d in dims)}


def _adaptive_pool(t):
    _, _, H, W = t["x"].shape
    return adaptive_avg_pool(t["x"], min(3, H), min(4, W))


def _fixed(n: int) -> Callable[[np.random.Generator], int]:
    return lambda rng: n


def _multiple(step: int) -> Callable[[np.random.Generator], int]:
    return lambda rng: step * extent(rng, MAX_EXTENT // step)


CHECKABLE_OPS: dict[str, CheckableOp] = {
    op.name: op
    for op in [
        CheckableOp(
            "matmul",
            {"a": (3, 4), "b": (4, 5)},
            lambda t: matmul(t["a"], t["b"]),
            sample_shapes=_matmul_shapes,
        ),
        CheckableOp(
            "softmax_rows",
            {"x": (3, 4)},
            lambda t: softmax_rows(t["x"]),
            sample_shapes=_map(extent, extent),
        ),
        CheckableOp(
            "population_variance",
            {"x": (2, 3, 4)},
            lambda t: population_variance(t["x"], axis=(1, 2)),
            sample_shapes=_map(extent, extent, extent),
        ),
        CheckableOp(
            "mse_loss",
            {"pred": (4, 1), "mos": (4,)},
            lambda t: mse_loss(t["pred"], t["mos"]),
            sample_shapes=_mse_shapes,
        ),
        CheckableOp(
            "conv2d",
            {"x": (2, 4, 5, 5), "weight": (6, 2, 3, 3), "bias": (6,)},
            _conv,
            sample_shapes=_conv_shapes,
        ),
        CheckableOp(
            "deform_conv2d",
            {
                "x": (1, 4, 6, 6),
                "offsets": (1, 18, 6, 6),
                "modulation": (1, 9, 6, 6),
                "weight": (4, 2, 3, 3),
                "bias": (4,),
            },
            _deform,
            _prepare_deform,
            _deform_shapes,
        ),
        CheckableOp(
            "bilinear_sample",
            {"x": (3, 4, 5), "py": (), "px": ()},
            lambda t: bilinear_sample(t["x"], t["py"], t["px"]),
            _prepare_bilinear,
            _bilinear_shapes,
        ),
        CheckableOp(
            "pixel_shuffle",
            {"x": (2, 8, 3, 3)},
            lambda t: pixel_shuffle(t["x"], 2),
            sample_shapes=_map(extent, _fixed(4), extent, extent),
        ),
        CheckableOp(
            "pixel_unshuffle",
            {"x": (2, 2, 4, 6)},
            lambda t: pixel_unshuffle(t["x"], 2),
            sample_shapes=_map(extent, extent, _multiple(2), _multiple(2)),
        ),
        CheckableOp(
            "channel_shuffle",
            {"x": (2, 6, 3, 3)},
            lambda t: channel_shuffle(t["x"], 2),
            sample_shapes=_map(extent, _multiple(2), extent, extent),
        ),
        CheckableOp(
            "adaptive_avg_pool",
            {"x": (2, 3, 7, 6)},
            _adaptive_pool,
            sample_shapes=_map(extent, extent, extent, extent),
        ),
        CheckableOp(
            "avg_pool",
            {"x": (2, 3, 6, 4)},
            lambda t: avg_pool(t["x"], 2),
            sample_shapes=_map(extent, extent, _multiple(2), _multiple(2)),
        ),
        CheckableOp(
            "batch_norm",
            {"x": (3, 2, 3, 3), "gamma": (2,), "beta": (2,)},
            _batch_norm,
            sample_shapes=_batch_norm_shapes,
        ),
        CheckableOp(
            "linear",
            {"x": (3, 5), "weight": (4, 5), "bias": (4,)},
            lambda t: linear(t["x"], t["weight"], t["bias"]),
            sample_shapes=_linear_shapes,
        ),
        CheckableOp("dropout", {"x": (4, 6)}, _dropout, sample_shapes=_map(extent, extent)),
        CheckableOp(
            "relu",
            {"x": (3, 5)},
            lambda t: relu(t["x"]),
            _prepare_relu,
            _map(extent, extent),
        ),
        CheckableOp(
            "sigmoid",
            {"x": (3, 5)},
            lambda t: sigmoid(t["x"]),
            sample_shapes=_map(extent, extent),
        ),
    ]
}


def registered_ops() -> list[str]:
    return [*CHECKABLE_OPS, E2E_OP]


def get_op(name: str) -> CheckableOp:
    try:
        return CHECKABLE_OPS[name]
    except KeyError:
        raise UnknownOpError(
            f"no gradient check registered for '{name}'; known ops: {', '.join(registered_ops())}"
        ) from None
