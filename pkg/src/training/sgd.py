from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

import config
from src.errors import ContractError, DimensionError, ParameterError
from src.models.weights import NamedWeights


@dataclass(frozen=True)
class SGDConfig:
    lr: float = config.LEARNING_RATE
    momentum: float = config.MOMENTUM
    weight_decay: float = config.WEIGHT_DECAY
    epochs: int = config.EPOCHS
    batch_size: int = config.BATCH_SIZE
    seed: int = config.SEED

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError(
                f"epochs and batch_size must be >= 1, got {self.epochs} and {self.batch_size}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def sgd_step(
    weights: NamedWeights,
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    cfg: SGDConfig,
) -> tuple[NamedWeights, dict[str, np.ndarray]]:
    """
    Classical momentum with L2 weight decay folded into the gradient, applied in place:

        g' = g + weight_decay * p;  v = momentum * v + g';  p = p - lr * v

    Buffers (batch-norm running statistics) are not touched.
    """
    for name, tensor in weights.trainable().items():
        if name not in grads:
            raise ContractError(f"no gradient for parameter '{name}'")
        g = grads[name]
        p = tensor.data
        if g.shape != p.shape:
            raise DimensionError(f"gradient of '{name}' has shape {g.shape}, parameter {p.shape}")
        g = g + cfg.weight_decay * p
        v = velocity.get(name)
        v = g if v is None else cfg.momentum * v + g
        velocity[name] = v
        weights.assign(name, p - cfg.lr * v)
    return weights, velocity
