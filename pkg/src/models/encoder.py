from __future__ import annotations

from src.errors import DimensionError
from src.models.base import ForwardContext, Module, ParamSpec, bn_params, conv_params
from src.models.pban_config import PBANConfig
from src.models.weights import NamedWeights
from src.ops.conv import ConvSpec
from src.tensor.functional import relu
from src.tensor.tensor import Tensor


class Encoder(Module):
    """Image encoder of one branch: 3x3 conv (3 -> C), batch norm, ReLU."""

    def __init__(self, config: PBANConfig, branch: str):
        super().__init__(f"encoder.{branch}")
        self.config = config
        self.spec = ConvSpec(3, config.channels, kernel=3)

    def param_specs(self) -> list[ParamSpec]:
        return conv_params(self.path("conv"), self.spec) + bn_params(
            self.path("bn"), self.config.channels
        )

    def forward(self, patch: Tensor, weights: NamedWeights, ctx: ForwardContext) -> Tensor:
        size = self.config.patch_size
        if patch.ndim != 4 or patch.shape[1:] != (3, size, size):
            raise DimensionError(f"encoder expects patches [B,3,{size},{size}], got {patch.shape}")
        x = self.conv("conv", self.spec, patch, weights)
        x = self.batch_norm("bn", x, weights, ctx, self.config.bn_momentum, self.config.bn_eps)
        return relu(x)


def encoder_forward(
    patch: Tensor, weights: NamedWeights, config: PBANConfig, branch: str = "hr", ctx=None
) -> Tensor:
    return Encoder(config, branch).forward(patch, weights, ctx or ForwardContext())
