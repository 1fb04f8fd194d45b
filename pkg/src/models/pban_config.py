from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from src.errors import ParameterError

ATTENTION_MODES = ("bidirectional", "hr_to_sr", "sr_to_hr", "self", "kv_homology", "none")
VARIANTS = ("FR", "NR")


@dataclass
class PBANConfig:
    """
    Architecture hyperparameters.

    `head_dims` and `fusion_dims` are derived from the channel width and branch count when left
    unset: the head starts at the flattened pooled width C*ph*pw and halves twice, the fusion
    starts at the concatenated head output, narrows by 4, and ends at 1.
    """

    channels: int = 64
    blocks: int = 4
    gmdc_kernels: tuple[int, ...] = (3, 7)
    gmdc_groups: int = 2
    offset_predictor_kernel: int = 3
    subec_upscale: int = 2
    subec_groups: int = 2
    pool_out: tuple[int, int] = (4, 4)
    head_dims: tuple[int, ...] | None = None
    fusion_dims: tuple[int, ...] | None = None
    dropout_p: float = 0.5
    attention_mode: str = "bidirectional"
    variant: str = "FR"
    patch_size: int = 32
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    modulation_init_bias: float = 20.0
    use_gmdc: bool = True
    gmdc_pointwise: bool = True
    use_subec: bool = True
    subec_shuffle: bool = True
    tie_branches: bool = False

    def __post_init__(self):
        self.gmdc_kernels = tuple(int(k) for k in self.gmdc_kernels)
        self.pool_out = tuple(int(p) for p in self.pool_out)
        if self.head_dims is None:
            flat = self.channels * self.pool_out[0] * self.pool_out[1]
            self.head_dims = (flat, flat // 2, flat // 4)
        if self.fusion_dims is None:
            width = self.head_dims[-1] * len(self.branches)
            self.fusion_dims = (width, max(1, self.head_dims[-1] // 4), 1)
        self.head_dims = tuple(int(d) for d in self.head_dims)
        self.fusion_dims = tuple(int(d) for d in self.fusion_dims)
        self.validate()

    @property
    def branches(self) -> tuple[str, ...]:
        return ("sr",) if self.variant == "NR" else ("hr", "sr")

    def validate(self) -> None:
        C = self.channels
        if C < 16 or C % 16:
            raise ParameterError(f"channels must be a positive multiple of 16, got {C}")
        if self.blocks < 1:
            raise ParameterError(f"blocks must be >= 1, got {self.blocks}")
        if self.gmdc_groups != len(self.gmdc_kernels):
            raise ParameterError(
                f"gmdc_groups={self.gmdc_groups} must equal the number of kernels "
                f"{list(self.gmdc_kernels)}"
            )
        if C % self.gmdc_groups:
            raise ParameterError(f"gmdc_groups={self.gmdc_groups} must divide channels={C}")
        for k in (*self.gmdc_kernels, self.offset_predictor_kernel):
            if k < 1 or k % 2 == 0:
                raise ParameterError(f"kernel edges must be odd, got {k}")
        if self.subec_upscale < 1 or self.subec_upscale**2 > C:
            raise ParameterError(f"subec_upscale S={self.subec_upscale} needs 1 <= S^2 <= {C}")
        if self.subec_groups < 1 or C % self.subec_groups:
            raise ParameterError(f"subec_groups={self.subec_groups} must divide channels={C}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ParameterError(
                f"attention_mode must be one of {ATTENTION_MODES}, got {self.attention_mode!r}"
            )
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "NR" and self.attention_mode not in ("self", "none"):
            raise ParameterError(
                f"the NR variant has a single branch and needs attention_mode 'self', "
                f"got {self.attention_mode!r}"
            )
        if not all(1 <= p <= self.patch_size for p in self.pool_out):
            raise ParameterError(f"pool_out {self.pool_out} must fit patch_size {self.patch_size}")
        flat = C * self.pool_out[0] * self.pool_out[1]
        if len(self.head_dims) < 2 or self.head_dims[0] != flat:
            raise ParameterError(
                f"head_dims {list(self.head_dims)} must start at the flatten width "
                f"{C}*{self.pool_out[0]}*{self.pool_out[1]} = {flat}"
            )
        width = self.head_dims[-1] * len(self.branches)
        if len(self.fusion_dims) < 2 or self.fusion_dims[0] != width or self.fusion_dims[-1] != 1:
            raise ParameterError(
                f"fusion_dims {list(self.fusion_dims)} must run from {width} to 1"
            )
        if min(self.head_dims + self.fusion_dims) < 1:
            raise ParameterError("layer widths must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if not 0.0 <= self.bn_momentum <= 1.0 or self.bn_eps <= 0:
            raise ParameterError("bn_momentum must be in [0, 1] and bn_eps positive")

    @classmethod
    def micro(cls, **overrides) -> PBANConfig:
        """Small configuration for overfit and gradient checks (C=16, one block, no dropout)."""
        params = dict(
            channels=16,
            blocks=1,
            head_dims=(256, 64, 32),
            dropout_p=0.0,
        )
        params.update(overrides)
        if "fusion_dims" not in params:
            single = params.get("variant", "FR") == "NR"
            params["fusion_dims"] = (32 if single else 64, 16, 1)
        return cls(**params)

    @classmethod
    def nr(cls, **overrides) -> PBANConfig:
        """Single-branch no-reference variant with self-attention."""
        params = dict(variant="NR", attention_mode="self")
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in data.items()}

    @classmethod
    def from_dict(cls, data: dict) -> PBANConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown PBANConfig keys: {unknown}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json_file(cls, path: str | Path) -> PBANConfig:
        """Defaults overridden key-by-key by the JSON object in `path`."""
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: invalid JSON config ({exc})") from exc
        if not isinstance(data, dict):
            raise ParameterError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)
