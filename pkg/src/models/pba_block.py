from __future__ import annotations

from src.models.base import ForwardContext, Module, ParamSpec
from src.models.bi_atten import BiAtten
from src.models.pban_config import PBANConfig
from src.models.subec import SubEC
from src.models.weights import NamedWeights
from src.tensor.tensor import Tensor


class PBABlock(Module):
    """Residual block: o = SubEC(BiAtten(x)) + x for every branch."""

    def __init__(self, config: PBANConfig, index: int):
        super().__init__(f"block{index}")
        self.config = config
        self.index = index
        self.biatten = BiAtten(config, index)
        self.subec = {b: SubEC(config, self.path(f"{b}.subec")) for b in config.branches}

    def param_specs(self) -> list[ParamSpec]:
        specs = self.biatten.param_specs()
        if self.config.use_subec:
            for b in self.config.branches:
                specs += self.subec[b].param_specs()
        return specs

    def forward(
        self, xs: dict[str, Tensor], weights: NamedWeights, ctx: ForwardContext
    ) -> dict[str, Tensor]:
        for b, x in xs.items():
            ctx.record(self.index, b, "before_pba", x)
        attended = self.biatten.forward(xs, weights, ctx)
        out = {}
        for b, x in xs.items():
            a = attended[b]
            ctx.record(self.index, b, "after_biatten", a)
            if self.config.use_subec:
                a = self.subec[b].forward(a, weights)
                ctx.record(self.index, b, "after_subec", a)
            out[b] = a + x
            ctx.record(self.index, b, "after_pba", out[b])
        return out


def pba_block_forward(
    x_hr: Tensor,
    x_sr: Tensor,
    weights: NamedWeights,
    config: PBANConfig,
    index: int = 0,
    ctx: ForwardContext | None = None,
) -> tuple[Tensor, Tensor]:
    out = PBABlock(config, index).forward({"hr": x_hr, "sr": x_sr}, weights, ctx or ForwardContext())
    return out["hr"], out["sr"]
