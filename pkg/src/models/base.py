"""
Building blocks shared by the PBAN components.

A component is a `Module` that declares its parameters as `ParamSpec`s under a dotted path
prefix and reads them back from a `NamedWeights` map during `forward`. Components hold no
tensors themselves, so one component tree can run many weight sets and many threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from src.ops.conv import ConvSpec, conv2d
from src.ops.layers import Mode, batch_norm, check_mode, linear
from src.tensor.tensor import Tensor

if TYPE_CHECKING:
    from src.models.weights import NamedWeights

BUFFER_SUFFIXES = (".running_mean", ".running_var")

# Stage keys recorded by a traced forward pass, with their display labels.
STAGES = {
    "before_pba": "image before PBA",
    "k_after_gmdc": "K after GMDC",
    "after_biatten": "after Bi-Atten",
    "after_subec": "after SubEC",
    "after_pba": "after PBA",
}


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIXES)


@dataclass(frozen=True)
class ParamSpec:
    """
    Shape and initialization rule of one named tensor.

    init is one of "uniform" (U(-1/sqrt(fan_in), 1/sqrt(fan_in))), "zeros", "ones" or
    "offset_bias" (zeros for the offset channels, `value` for the trailing modulation third).
    """

    name: str
    shape: tuple[int, ...]
    init: str = "uniform"
    fan_in: int = 0
    value: float = 0.0

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def trainable(self) -> bool:
        return not is_buffer(self.name)


@dataclass
class ForwardContext:
    mode: Mode = "eval"
    rng: np.random.Generator | None = None
    bn_updates: dict[str, np.ndarray] = field(default_factory=dict)
    trace: dict[tuple[int, str, str], np.ndarray] | None = None

    def __post_init__(self):
        check_mode(self.mode)

    def record(self, block: int, branch: str, stage: str, value: Tensor) -> None:
        if self.trace is not None:
            self.trace[(block, branch, stage)] = value.data


def conv_params(path: str, spec: ConvSpec, weight_init: str = "uniform") -> list[ParamSpec]:
    bias_init = "uniform" if weight_init == "uniform" else "zeros"
    return [
        ParamSpec(f"{path}.weight", spec.weight_shape, weight_init, spec.fan_in),
        ParamSpec(f"{path}.bias", spec.bias_shape, bias_init, spec.fan_in),
    ]


def linear_params(path: str, d_in: int, d_out: int) -> list[ParamSpec]:
    return [
        ParamSpec(f"{path}.weight", (d_out, d_in), "uniform", d_in),
        ParamSpec(f"{path}.bias", (d_out,), "uniform", d_in),
    ]


def bn_params(path: str, channels: int) -> list[ParamSpec]:
    return [
        ParamSpec(f"{path}.gamma", (channels,), "ones"),
        ParamSpec(f"{path}.beta", (channels,), "zeros"),
        ParamSpec(f"{path}.running_mean", (channels,), "zeros"),
        ParamSpec(f"{path}.running_var", (channels,), "ones"),
    ]


class Module:
    """Base class of the model components; `prefix` is the dotted parameter path."""

    def __init__(self, prefix: str):
        self.prefix = prefix

    def path(self, name: str) -> str:
        return f"{self.prefix}.{name}"

    def param_specs(self) -> list[ParamSpec]:
        raise NotImplementedError(f"{type(self).__name__}.param_specs")

    def conv(self, name: str, spec: ConvSpec, x: Tensor, weights: NamedWeights) -> Tensor:
        return conv2d(x, spec, weights[self.path(f"{name}.weight")], weights[self.path(f"{name}.bias")])

    def linear(self, name: str, x: Tensor, weights: NamedWeights) -> Tensor:
        return linear(x, weights[self.path(f"{name}.weight")], weights[self.path(f"{name}.bias")])

    def batch_norm(
        self, name: str, x: Tensor, weights: NamedWeights, ctx: ForwardContext, momentum: float, eps: float
    ) -> Tensor:
        base = self.path(name)
        out, stats = batch_norm(
            x,
            weights[f"{base}.gamma"],
            weights[f"{base}.beta"],
            weights.array(f"{base}.running_mean"),
            weights.array(f"{base}.running_var"),
            ctx.mode,
            momentum=momentum,
            eps=eps,
        )
        if stats is not None:
            ctx.bn_updates[f"{base}.running_mean"] = stats[0]
            ctx.bn_updates[f"{base}.running_var"] = stats[1]
        return out
