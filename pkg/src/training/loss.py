from __future__ import annotations

import numpy as np

from src.errors import ContractError, DimensionError
from src.tensor.tensor import Tensor


def mse_loss(pred: Tensor, mos: Tensor | np.ndarray) -> Tensor:
    """(1/B) * sum((pred - mos)^2) for predictions [B, 1] (or [B]) against labels [B]."""
    mos = mos if isinstance(mos, Tensor) else Tensor(np.asarray(mos), dtype=pred.dtype)
    B = pred.shape[0] if pred.ndim else 0
    if B < 1:
        raise ContractError("mse_loss needs at least one prediction")
    if pred.size != B or mos.shape != (B,):
        raise DimensionError(f"mse_loss: predictions {pred.shape} do not match labels {mos.shape}")
    diff = pred.reshape(B) - mos
    return (diff * diff).sum() / float(B)
