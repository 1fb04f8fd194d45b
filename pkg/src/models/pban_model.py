from __future__ import annotations

import numpy as np

from src.errors import DimensionError, ParameterError
from src.models.base import ForwardContext, Module, ParamSpec
from src.models.encoder import Encoder
from src.models.pba_block import PBABlock
from src.models.pban_config import PBANConfig
from src.models.quality_head import QualityHead
from src.models.weights import NamedWeights
from src.ops.layers import Mode
from src.tensor.tensor import Tensor
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


class PBAN(Module):
    """
    Full-reference network: an encoder per branch, a stack of PBA blocks and the quality head.

    The model object only describes the architecture; all tensors live in the `NamedWeights`
    passed to `forward`, so a single instance can score with any compatible weight set.
    """

    def __init__(self, config: PBANConfig):
        super().__init__("")
        self.config = config
        self.encoders = {b: Encoder(config, b) for b in config.branches}
        self.blocks = [PBABlock(config, i) for i in range(config.blocks)]
        self.head = QualityHead(config)

    def param_specs(self) -> list[ParamSpec]:
        specs = []
        for encoder in self.encoders.values():
            specs += encoder.param_specs()
        for block in self.blocks:
            specs += block.param_specs()
        specs += self.head.param_specs()
        return specs

    def run(self, patches: dict[str, Tensor], weights: NamedWeights, ctx: ForwardContext) -> Tensor:
        shapes = {p.shape for p in patches.values()}
        if len(shapes) != 1:
            raise DimensionError(f"patch batches differ in shape: {sorted(shapes)}")
        xs = {b: self.encoders[b].forward(patches[b], weights, ctx) for b in self.config.branches}
        for block in self.blocks:
            xs = block.forward(xs, weights, ctx)
        return self.head.forward(xs, weights, ctx)

    def forward(
        self, hr: Tensor, sr: Tensor, weights: NamedWeights, ctx: ForwardContext | None = None
    ) -> Tensor:
        return self.run({"hr": hr, "sr": sr}, weights, ctx or ForwardContext())

    def score(self, patches: dict[str, Tensor], weights: NamedWeights, ctx=None) -> Tensor:
        """Branch-keyed entry point shared by both variants."""
        return self.run(patches, weights, ctx or ForwardContext())


class PBANNR(PBAN):
    """No-reference variant: one (sr) branch with self-attention, no concatenation."""

    def forward(
        self, sr: Tensor, weights: NamedWeights, ctx: ForwardContext | None = None
    ) -> Tensor:
        return self.run({"sr": sr}, weights, ctx or ForwardContext())


def build_model(config: PBANConfig) -> PBAN:
    return PBANNR(config) if config.variant == "NR" else PBAN(config)


def pban_forward(
    hr_patch: Tensor,
    sr_patch: Tensor,
    weights: NamedWeights,
    config: PBANConfig,
    mode: Mode = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Scores a batch of aligned patch pairs; returns [B, 1]."""
    return PBAN(config).forward(hr_patch, sr_patch, weights, ForwardContext(mode=mode, rng=rng))


def pban_nr_forward(
    patch: Tensor,
    weights: NamedWeights,
    config: PBANConfig,
    mode: Mode = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    if config.variant != "NR":
        raise ParameterError(f"pban_nr_forward needs an NR config, got variant {config.variant!r}")
    return PBANNR(config).forward(patch, weights, ForwardContext(mode=mode, rng=rng))
