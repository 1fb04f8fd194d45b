from __future__ import annotations

from src.models.base import Module, ParamSpec, conv_params
from src.models.pban_config import PBANConfig
from src.models.weights import NamedWeights
from src.ops.conv import ConvSpec
from src.ops.layers import adaptive_avg_pool, avg_pool
from src.ops.shuffle import channel_shuffle, pixel_shuffle
from src.tensor.functional import relu
from src.tensor.tensor import Tensor


class SubEC(Module):
    """
    Sub-information excitation convolution.

    Reweights x by a spatial map W_px [B,1,H,W] from the sub-pixel branch and a channel vector
    W_ch [B,C,1,1] from the sub-channel branch: out = x * W_ch * W_px. The weights are used raw,
    without a squashing activation.
    """

    def __init__(self, config: PBANConfig, prefix: str):
        super().__init__(prefix)
        self.config = config
        C, S, g = config.channels, config.subec_upscale, config.subec_groups
        self.pixel_conv1 = ConvSpec(C, C // 2, kernel=3)
        self.pixel_conv2 = ConvSpec(C // 2, S * S, kernel=3)
        self.channel_expand = ConvSpec(C, C * S, kernel=1, groups=g)
        self.channel_compress = ConvSpec(C * S, C, kernel=1)

    def param_specs(self) -> list[ParamSpec]:
        return (
            conv_params(self.path("pixel_conv1"), self.pixel_conv1)
            + conv_params(self.path("pixel_conv2"), self.pixel_conv2)
            + conv_params(self.path("channel_expand"), self.channel_expand)
            + conv_params(self.path("channel_compress"), self.channel_compress)
        )

    def pixel_weight(self, x: Tensor, weights: NamedWeights) -> Tensor:
        S = self.config.subec_upscale
        y = relu(self.conv("pixel_conv1", self.pixel_conv1, x, weights))
        y = self.conv("pixel_conv2", self.pixel_conv2, y, weights)
        return avg_pool(pixel_shuffle(y, S), S)

    def channel_weight(self, x: Tensor, weights: NamedWeights) -> Tensor:
        y = self.conv("channel_expand", self.channel_expand, adaptive_avg_pool(x, 1, 1), weights)
        if self.config.subec_shuffle:
            y = channel_shuffle(y, self.config.subec_groups)
        return self.conv("channel_compress", self.channel_compress, y, weights)

    def forward(self, x: Tensor, weights: NamedWeights) -> Tensor:
        return x * self.channel_weight(x, weights) * self.pixel_weight(x, weights)


def subec_forward(
    x: Tensor, weights: NamedWeights, config: PBANConfig, prefix: str = "block0.hr.subec"
) -> Tensor:
    return SubEC(config, prefix).forward(x, weights)
