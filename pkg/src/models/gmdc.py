"""
Grouped multi-scale deformable convolution (GMDC).

Channels are split into n contiguous groups; group i runs a modulated deformable convolution
with kernel edge E_i whose offsets and modulation are predicted from the group's own input by
a zero-initialized conv. A 1x1 point-wise conv mixes the concatenated groups.
"""

from __future__ import annotations

from src.models.base import Module, ParamSpec, conv_params
from src.models.pban_config import PBANConfig
from src.models.weights import NamedWeights
from src.ops.conv import ConvSpec, conv2d
from src.ops.deform import DeformField, deform_conv2d
from src.tensor.functional import concat, sigmoid, split
from src.tensor.tensor import Tensor


class GMDC(Module):
    def __init__(self, config: PBANConfig, prefix: str):
        super().__init__(prefix)
        self.config = config
        width = config.channels // config.gmdc_groups
        self.deform_specs = [ConvSpec(width, width, kernel=k) for k in config.gmdc_kernels]
        self.offset_specs = [
            ConvSpec(width, 3 * k * k, kernel=config.offset_predictor_kernel)
            for k in config.gmdc_kernels
        ]
        self.pointwise = ConvSpec(config.channels, config.channels, kernel=1)

    def param_specs(self) -> list[ParamSpec]:
        specs = []
        for i, (offset, deform) in enumerate(zip(self.offset_specs, self.deform_specs)):
            specs.append(ParamSpec(self.path(f"group{i}.offset.weight"), offset.weight_shape, "zeros"))
            specs.append(
                ParamSpec(
                    self.path(f"group{i}.offset.bias"),
                    offset.bias_shape,
                    "offset_bias",
                    value=self.config.modulation_init_bias,
                )
            )
            specs += conv_params(self.path(f"group{i}.deform"), deform)
        if self.config.gmdc_pointwise:
            specs += conv_params(self.path("pointwise"), self.pointwise)
        return specs

    def field(self, i: int, x: Tensor, weights: NamedWeights) -> DeformField:
        """Offsets and sigmoid modulation predicted for group i from its input."""
        points = self.config.gmdc_kernels[i] ** 2
        raw = conv2d(
            x,
            self.offset_specs[i],
            weights[self.path(f"group{i}.offset.weight")],
            weights[self.path(f"group{i}.offset.bias")],
        )
        return DeformField(
            offsets=raw[:, : 2 * points], modulation=sigmoid(raw[:, 2 * points :])
        )

    def forward(self, x: Tensor, weights: NamedWeights) -> Tensor:
        parts = split(x, self.config.gmdc_groups, axis=1)
        outs = []
        for i, part in enumerate(parts):
            outs.append(
                deform_conv2d(
                    part,
                    self.deform_specs[i],
                    weights[self.path(f"group{i}.deform.weight")],
                    weights[self.path(f"group{i}.deform.bias")],
                    self.field(i, part, weights),
                )
            )
        y = concat(outs, axis=1) if len(outs) > 1 else outs[0]
        if self.config.gmdc_pointwise:
            y = self.conv("pointwise", self.pointwise, y, weights)
        return y


def gmdc_forward(
    x: Tensor, weights: NamedWeights, config: PBANConfig, prefix: str = "block0.hr.biatten.gmdc"
) -> Tensor:
    return GMDC(config, prefix).forward(x, weights)
