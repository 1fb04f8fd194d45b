from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.errors import ParameterError


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: np.ndarray  # fold index per record

    def validation(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def training(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


def kfold_split(n_records: int, k: int = 5, seed: int = 0) -> FoldSplit:
    """Seeded shuffle of the records, dealt round-robin into k folds."""
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if n_records < k:
        raise ParameterError(f"cannot split {n_records} records into {k} folds")
    order = np.random.default_rng(seed).permutation(n_records)
    assignments = np.empty(n_records, dtype=np.int64)
    assignments[order] = np.arange(n_records) % k
    return FoldSplit(k, assignments)


def holdout_split(n_records: int, test_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Random disjoint (train, test) index sets; test holds round(n * fraction) records."""
    if not 0.0 <= test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in [0, 1), got {test_fraction}")
    n_test = int(round(n_records * test_fraction))
    if test_fraction > 0 and not 1 <= n_test < n_records:
        raise ParameterError(
            f"test_fraction {test_fraction} leaves no usable split of {n_records} records"
        )
    order = np.random.default_rng([seed, n_records]).permutation(n_records)
    return np.sort(order[n_test:]), np.sort(order[:n_test])
