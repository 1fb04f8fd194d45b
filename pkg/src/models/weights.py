from __future__ import annotations

import fnmatch
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np
import pandas as pd

from src.errors import ContractError, DimensionError
from src.models.base import ParamSpec, is_buffer
from src.models.pban_config import PBANConfig
from src.tensor.tensor import Tensor
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


class NamedWeights:
    """
    Ordered map from parameter path to tensor: the model state, checkpoint payload and
    optimizer target. Iteration is lexicographic by path.

    Trainable tensors are leaves with `requires_grad` set; batch-norm running statistics
    (paths ending in running_mean / running_var) are plain buffers.
    """

    def __init__(self, tensors: Mapping[str, Tensor | np.ndarray] | None = None):
        self._tensors: dict[str, Tensor] = {}
        for name, value in (tensors or {}).items():
            self[name] = value

    def __setitem__(self, name: str, value: Tensor | np.ndarray) -> None:
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        self._tensors[name] = Tensor._wrap(data, None, not is_buffer(name))

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise ContractError(f"missing parameter '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(name, self._tensors[name]) for name in self.names()]

    def array(self, name: str) -> np.ndarray:
        return self[name].data

    def trainable(self) -> dict[str, Tensor]:
        return {name: t for name, t in self.items() if not is_buffer(name)}

    def buffers(self) -> dict[str, Tensor]:
        return {name: t for name, t in self.items() if is_buffer(name)}

    def astype(self, dtype) -> NamedWeights:
        return NamedWeights({name: t.data.astype(dtype) for name, t in self.items()})

    def copy(self) -> NamedWeights:
        return NamedWeights({name: t.data.copy() for name, t in self.items()})

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def assign(self, name: str, data: np.ndarray) -> None:
        """Replaces the value of an existing tensor, keeping its shape."""
        current = self[name]
        if data.shape != current.shape:
            raise DimensionError(f"'{name}': new value {data.shape} != {current.shape}")
        self[name] = data.astype(current.dtype, copy=False)

    def equals(self, other: NamedWeights) -> bool:
        return self.names() == other.names() and all(
            np.array_equal(t.data, other.array(name)) for name, t in self.items()
        )

    def check_against(self, specs: list[ParamSpec]) -> None:
        """Raises unless the tensors are exactly the declared ones, with declared shapes."""
        expected = {s.name: s.shape for s in specs}
        missing = sorted(set(expected) - set(self._tensors))
        orphans = sorted(set(self._tensors) - set(expected))
        if missing or orphans:
            raise ContractError(f"weights do not fit the model: missing {missing}, unused {orphans}")
        for name, shape in expected.items():
            if self[name].shape != shape:
                raise DimensionError(f"'{name}' has shape {self[name].shape}, model expects {shape}")


def init_weights(config: PBANConfig, seed: int) -> NamedWeights:
    """Seeded initialization of every tensor the model declares (float32)."""
    from src.models.pban_model import build_model

    rng = np.random.default_rng(seed)
    weights = NamedWeights()
    for spec in sorted(build_model(config).param_specs(), key=lambda s: s.name):
        weights[spec.name] = _initial_value(spec, rng)
    if config.tie_branches:
        tie_weights(weights)
    logger.info(f"Initialized {len(weights)} tensors with seed {seed}")
    return weights


def _initial_value(spec: ParamSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.init == "uniform":
        bound = 1.0 / np.sqrt(spec.fan_in)
        return rng.uniform(-bound, bound, size=spec.shape).astype(np.float32)
    if spec.init == "zeros":
        return np.zeros(spec.shape, dtype=np.float32)
    if spec.init == "ones":
        return np.ones(spec.shape, dtype=np.float32)
    if spec.init == "offset_bias":
        value = np.zeros(spec.shape, dtype=np.float32)
        value[2 * spec.shape[0] // 3 :] = spec.value
        return value
    raise ContractError(f"unknown init rule '{spec.init}' for '{spec.name}'")


def tie_weights(weights: NamedWeights) -> NamedWeights:
    """Copies every hr-branch tensor onto its sr-branch counterpart (in place)."""
    for name in weights.names():
        parts = name.split(".")
        if "hr" in parts:
            twin = ".".join("sr" if p == "hr" else p for p in parts)
            if twin in weights:
                weights.assign(twin, weights.array(name).copy())
    return weights


@dataclass(frozen=True)
class ParamCount:
    per_param: dict[str, int]

    @property
    def total(self) -> int:
        """Trainable element count."""
        return sum(n for name, n in self.per_param.items() if not is_buffer(name))

    @property
    def buffers(self) -> int:
        return sum(n for name, n in self.per_param.items() if is_buffer(name))

    @property
    def per_module(self) -> dict[str, int]:
        modules: dict[str, int] = {}
        for name, n in self.per_param.items():
            if not is_buffer(name):
                module = name.rsplit(".", 1)[0]
                modules[module] = modules.get(module, 0) + n
        return dict(sorted(modules.items()))

    def matching(self, pattern: str) -> int:
        """Trainable elements of the parameters whose path matches the glob `pattern`."""
        return sum(
            n
            for name, n in self.per_param.items()
            if fnmatch.fnmatchcase(name, pattern) and not is_buffer(name)
        )

    def table(self) -> pd.DataFrame:
        df = pd.DataFrame(list(self.per_module.items()), columns=["module", "params"])
        df["top"] = df["module"].str.split(".").str[0]
        return df


def param_count(config: PBANConfig) -> ParamCount:
    """Exact element counts of every tensor the model declares, from the config alone."""
    from src.models.pban_model import build_model

    specs = build_model(config).param_specs()
    return ParamCount({s.name: s.size for s in sorted(specs, key=lambda s: s.name)})
