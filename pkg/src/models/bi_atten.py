"""
Bidirectional attention (Bi-Atten).

Each branch computes Q, K and V with 3x3 convolutions and passes K through GMDC. Features are
flattened to N = H*W pixel tokens of width C. In bidirectional mode a branch attends with its
own Q and V against the other branch's deformed K; the logits Q K^T are divided by the square
root of their own population variance (per batch item, over all N*N entries) before the row
softmax.
"""

from __future__ import annotations

from dataclasses import replace

from src.errors import DimensionError, ParameterError
from src.models.base import ForwardContext, Module, ParamSpec, conv_params
from src.models.gmdc import GMDC
from src.models.pban_config import PBANConfig
from src.models.weights import NamedWeights
from src.ops.conv import ConvSpec
from src.tensor.functional import matmul, population_variance, softmax_rows
from src.tensor.tensor import Tensor

VARIANCE_EPS = 1e-8


def attention_map(q: Tensor, k: Tensor) -> Tensor:
    """Row-softmax of variance-scaled logits for tokens q, k [B, N, C]; returns [B, N, N]."""
    logits = matmul(q, k.transpose(0, 2, 1))
    spread = population_variance(logits, axis=(1, 2), keepdims=True)
    return softmax_rows(logits / (spread + VARIANCE_EPS).sqrt())


def attend(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(Var)) V over pixel tokens of [B, C, H, W] maps."""
    if not (q.shape == k.shape == v.shape):
        raise DimensionError(f"attention inputs differ: Q {q.shape}, K {k.shape}, V {v.shape}")
    B, C, H, W = q.shape

    def tokens(t: Tensor) -> Tensor:
        return t.reshape(B, C, H * W).transpose(0, 2, 1)

    out = matmul(attention_map(tokens(q), tokens(k)), tokens(v))
    return out.transpose(0, 2, 1).reshape(B, C, H, W)


def key_value_sources(mode: str, branch: str, other: str | None) -> tuple[str, str]:
    """Which branch supplies K and which supplies V for `branch` under `mode`."""
    if other is None or mode == "self":
        return branch, branch
    if mode == "bidirectional":
        return other, branch
    if mode == "hr_to_sr":
        return (other if branch == "sr" else branch), branch
    if mode == "sr_to_hr":
        return (other if branch == "hr" else branch), branch
    if mode == "kv_homology":
        return other, other
    raise ParameterError(f"no attention routing for mode {mode!r}")


class BiAtten(Module):
    """Attention stage of one PBA block, covering every branch."""

    def __init__(self, config: PBANConfig, block: int):
        super().__init__(f"block{block}")
        self.config = config
        self.block = block
        self.spec = ConvSpec(config.channels, config.channels, kernel=3)
        self.gmdc = {
            b: GMDC(config, self.path(f"{b}.biatten.gmdc")) for b in config.branches
        }

    @property
    def enabled(self) -> bool:
        return self.config.attention_mode != "none"

    def param_specs(self) -> list[ParamSpec]:
        if not self.enabled:
            return []
        specs = []
        for b in self.config.branches:
            for name in ("q_conv", "k_conv", "v_conv"):
                specs += conv_params(self.path(f"{b}.biatten.{name}"), self.spec)
            if self.config.use_gmdc:
                specs += self.gmdc[b].param_specs()
        return specs

    def forward(
        self, xs: dict[str, Tensor], weights: NamedWeights, ctx: ForwardContext
    ) -> dict[str, Tensor]:
        if not self.enabled:
            return dict(xs)
        shapes = {x.shape for x in xs.values()}
        if len(shapes) != 1:
            raise DimensionError(f"branch inputs differ in shape: {sorted(shapes)}")

        q, k, v = {}, {}, {}
        for b, x in xs.items():
            q[b] = self.conv(f"{b}.biatten.q_conv", self.spec, x, weights)
            k[b] = self.conv(f"{b}.biatten.k_conv", self.spec, x, weights)
            v[b] = self.conv(f"{b}.biatten.v_conv", self.spec, x, weights)
            if self.config.use_gmdc:
                k[b] = self.gmdc[b].forward(k[b], weights)
                ctx.record(self.block, b, "k_after_gmdc", k[b])

        branches = list(xs)
        out = {}
        for b in branches:
            other = next((o for o in branches if o != b), None)
            k_src, v_src = key_value_sources(self.config.attention_mode, b, other)
            out[b] = attend(q[b], k[k_src], v[v_src])
        return out


def bi_atten_forward(
    x_hr: Tensor,
    x_sr: Tensor,
    weights: NamedWeights,
    config: PBANConfig,
    mode: str | None = None,
    block: int = 0,
) -> tuple[Tensor, Tensor]:
    """Attention stage on an (HR, SR) feature pair; `mode` overrides config.attention_mode."""
    if mode is not None and mode != config.attention_mode:
        config = replace(config, attention_mode=mode)
    out = BiAtten(config, block).forward({"hr": x_hr, "sr": x_sr}, weights, ForwardContext())
    return out["hr"], out["sr"]
