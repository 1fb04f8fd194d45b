"""Rank and linear agreement between predictions and subjective scores."""

from __future__ import annotations

import numpy as np
from scipy import stats

from src.errors import DimensionError, UndefinedMetricError


def _pair(x, y, minimum: int, name: str) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionError(f"{name}: lengths differ ({x.size} vs {y.size})")
    if x.size < minimum:
        raise UndefinedMetricError(f"{name} needs at least {minimum} samples, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise UndefinedMetricError(f"{name}: inputs contain non-finite values")
    return x, y


def _pearson(x: np.ndarray, y: np.ndarray, name: str) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError(f"{name} is undefined for constant input")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def plcc(x, y) -> float:
    """Pearson linear correlation."""
    x, y = _pair(x, y, 2, "plcc")
    return _pearson(x, y, "plcc")


def srcc(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of average (fractional) ranks."""
    x, y = _pair(x, y, 2, "srcc")
    return _pearson(stats.rankdata(x, method="average"), stats.rankdata(y, method="average"), "srcc")


def krcc(x, y) -> float:
    """Kendall tau-b: (concordant - discordant) / sqrt((T0 - Tx)(T0 - Ty))."""
    x, y = _pair(x, y, 2, "krcc")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedMetricError("krcc is undefined when one input is entirely tied")
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    upper = np.triu_indices(x.size, k=1)
    s = float((sx * sy)[upper].sum())
    n_x = float(np.count_nonzero(sx[upper]))
    n_y = float(np.count_nonzero(sy[upper]))
    return float(np.clip(s / np.sqrt(n_x * n_y), -1.0, 1.0))


def rmse(x, y) -> float:
    x, y = _pair(x, y, 1, "rmse")
    return float(np.sqrt(np.mean((x - y) ** 2)))
