from __future__ import annotations

from src.models.base import ForwardContext, Module, ParamSpec, linear_params
from src.models.pban_config import PBANConfig
from src.models.weights import NamedWeights
from src.ops.layers import adaptive_avg_pool, dropout
from src.tensor.functional import concat, relu
from src.tensor.tensor import Tensor


class QualityHead(Module):
    """
    Regression head.

    Each branch is average-pooled to `pool_out`, flattened and sent through
    linear -> ReLU -> dropout layers of widths `head_dims`; the branch vectors are concatenated
    and reduced to one score by the plain linear chain `fusion_dims`.
    """

    def __init__(self, config: PBANConfig):
        super().__init__("head")
        self.config = config

    def param_specs(self) -> list[ParamSpec]:
        specs = []
        dims = self.config.head_dims
        for b in self.config.branches:
            for j in range(len(dims) - 1):
                specs += linear_params(self.path(f"{b}.fc{j + 1}"), dims[j], dims[j + 1])
        fusion = self.config.fusion_dims
        for j in range(len(fusion) - 1):
            specs += linear_params(self.path(f"fusion.fc{j + 1}"), fusion[j], fusion[j + 1])
        return specs

    def forward(self, xs: dict[str, Tensor], weights: NamedWeights, ctx: ForwardContext) -> Tensor:
        ph, pw = self.config.pool_out
        vectors = []
        for b, x in xs.items():
            y = adaptive_avg_pool(x, ph, pw)
            y = y.reshape(y.shape[0], -1)
            for j in range(len(self.config.head_dims) - 1):
                y = relu(self.linear(f"{b}.fc{j + 1}", y, weights))
                y = dropout(y, self.config.dropout_p, ctx.rng, ctx.mode)
            vectors.append(y)
        y = concat(vectors, axis=1) if len(vectors) > 1 else vectors[0]
        for j in range(len(self.config.fusion_dims) - 1):
            y = self.linear(f"fusion.fc{j + 1}", y, weights)
        return y


def quality_head_forward(
    o_hr: Tensor,
    o_sr: Tensor,
    weights: NamedWeights,
    config: PBANConfig,
    mode: str = "eval",
    rng=None,
) -> Tensor:
    ctx = ForwardContext(mode=mode, rng=rng)
    return QualityHead(config).forward({"hr": o_hr, "sr": o_sr}, weights, ctx)
