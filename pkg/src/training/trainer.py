from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

import config
from src.data.checkpoint import save_checkpoint
from src.data.images import ImageRGB, patch_grid
from src.data.loader import Manifest, PatchPair, load_pairs
from src.errors import DataError, DimensionError, ParameterError
from src.metrics.report import fold_metrics
from src.models.base import ForwardContext
from src.models.pban_config import PBANConfig
from src.models.pban_model import PBAN, build_model
from src.models.weights import NamedWeights, init_weights
from src.reporting.report_generator import write_train_report
from src.tensor.tensor import Tensor, backward
from src.training.folds import holdout_split, kfold_split
from src.training.loss import mse_loss
from src.training.sgd import SGDConfig, sgd_step
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

FIT_POLICY = "retrain on the full training set after cross-validation"


@dataclass(frozen=True)
class PatchDataset:
    """Every aligned patch pair of a set of records, each labeled with its image MOS."""

    hr: np.ndarray  # [N, 3, s, s]
    sr: np.ndarray
    mos: np.ndarray  # [N] float32

    @classmethod
    def from_pairs(cls, pairs: list[PatchPair]) -> PatchDataset:
        if not pairs or sum(p.count for p in pairs) == 0:
            raise DataError("training set holds no patches")
        return cls(
            hr=np.concatenate([p.hr for p in pairs]),
            sr=np.concatenate([p.sr for p in pairs]),
            mos=np.concatenate([np.full(p.count, p.record.mos, dtype=np.float32) for p in pairs]),
        )

    def __len__(self) -> int:
        return len(self.mos)

    def batches(self, batch_size: int, rng: np.random.Generator):
        order = rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            yield order[start : start + batch_size]


@dataclass
class FitResult:
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


class Trainer:
    """Mini-batch SGD on the patch-level MSE objective."""

    def __init__(self, pban_config: PBANConfig, sgd_config: SGDConfig):
        self.config = pban_config
        self.sgd = sgd_config
        self.model: PBAN = build_model(pban_config)

    def _inputs(self, hr: np.ndarray, sr: np.ndarray) -> dict[str, Tensor]:
        arrays = {"hr": hr, "sr": sr}
        return {b: Tensor(arrays[b]) for b in self.config.branches}

    def step(
        self,
        weights: NamedWeights,
        velocity: dict[str, np.ndarray],
        hr: np.ndarray,
        sr: np.ndarray,
        mos: np.ndarray,
        rng: np.random.Generator,
    ) -> float:
        """One forward/backward/update on a batch; returns the batch loss before the update."""
        ctx = ForwardContext(mode="train", rng=rng)
        pred = self.model.score(self._inputs(hr, sr), weights, ctx)
        loss = mse_loss(pred, mos)
        grads = backward(loss, wrt=weights.trainable())
        sgd_step(weights, grads, velocity, self.sgd)
        for name, value in sorted(ctx.bn_updates.items()):
            weights.assign(name, value)
        return loss.item()

    def fit(
        self,
        dataset: PatchDataset,
        weights: NamedWeights,
        rng: np.random.Generator,
        max_steps: int | None = None,
    ) -> FitResult:
        """Runs `sgd.epochs` epochs (or stops after `max_steps` updates) and updates `weights`."""
        if max_steps is not None and max_steps < 1:
            raise ParameterError(f"max_steps must be >= 1, got {max_steps}")
        result = FitResult()
        velocity: dict[str, np.ndarray] = {}
        for epoch in range(self.sgd.epochs):
            losses = []
            for idx in dataset.batches(self.sgd.batch_size, rng):
                if max_steps is not None and len(result.step_losses) >= max_steps:
                    break
                loss = self.step(
                    weights, velocity, dataset.hr[idx], dataset.sr[idx], dataset.mos[idx], rng
                )
                losses.append(loss)
                result.step_losses.append(loss)
            if not losses:
                break
            result.epoch_losses.append(float(np.mean(losses)))
            logger.debug(f"epoch {epoch + 1}/{self.sgd.epochs}: loss {result.epoch_losses[-1]:.6f}")
        logger.info(
            f"Fit {len(result.step_losses)} steps over {len(dataset)} patches, "
            f"final epoch loss {result.epoch_losses[-1]:.6f}"
        )
        return result


def predict_patches(
    weights: NamedWeights,
    pban_config: PBANConfig,
    hr: np.ndarray | None,
    sr: np.ndarray,
    batch_size: int = config.EVAL_BATCH_SIZE,
) -> np.ndarray:
    """Eval-mode scores of aligned patch stacks [P, 3, s, s], in patch order."""
    model = build_model(pban_config)
    scores = []
    for start in range(0, len(sr), max(1, batch_size)):
        batch = {"sr": Tensor(sr[start : start + batch_size])}
        if "hr" in pban_config.branches:
            batch["hr"] = Tensor(hr[start : start + batch_size])
        scores.append(model.score(batch, weights, ForwardContext(mode="eval")).data.reshape(-1))
    return np.concatenate(scores) if scores else np.zeros(0, dtype=np.float32)


def _mean_score(scores: np.ndarray, source: str) -> float:
    if scores.size == 0:
        raise DataError(f"{source}: no patches to score")
    return float(np.mean(scores, dtype=np.float64))


def predict_pair(
    weights: NamedWeights,
    pban_config: PBANConfig,
    pair: PatchPair,
    batch_size: int = config.EVAL_BATCH_SIZE,
) -> float:
    scores = predict_patches(weights, pban_config, pair.hr, pair.sr, batch_size)
    return _mean_score(scores, pair.record.describe())


def predict_image(
    weights: NamedWeights,
    pban_config: PBANConfig,
    sr_img: ImageRGB,
    hr_img: ImageRGB | None,
    batch_size: int = config.EVAL_BATCH_SIZE,
) -> float:
    """Image quality as the mean eval-mode prediction over all aligned patch pairs."""
    size = pban_config.patch_size
    hr = None
    if hr_img is not None:
        if hr_img.pixels.shape != sr_img.pixels.shape:
            raise DataError(
                f"SR {sr_img.width}x{sr_img.height} and HR {hr_img.width}x{hr_img.height} differ"
            )
        hr = patch_grid(hr_img.pixels, size)
    elif "hr" in pban_config.branches:
        raise DimensionError("the FR variant needs an HR reference image")
    scores = predict_patches(weights, pban_config, hr, patch_grid(sr_img.pixels, size), batch_size)
    return _mean_score(scores, f"{sr_img.width}x{sr_img.height} image with patch size {size}")


@dataclass
class TrainReport:
    epoch_losses: list[float]
    step_losses: list[float]
    fold_losses: list[list[float]]
    fold_metrics: list[dict]
    wall_time: float
    checkpoint: str | None
    seed: int
    pban_config: dict
    sgd_config: dict
    fit_policy: str = FIT_POLICY
    test_metrics: dict | None = None
    test_predictions: list[dict] | None = None

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "step_losses": self.step_losses,
            "fold_losses": self.fold_losses,
            "fold_metrics": self.fold_metrics,
            "test_metrics": self.test_metrics,
            "test_predictions": self.test_predictions,
            "wall_time": self.wall_time,
            "checkpoint": self.checkpoint,
            "seed": self.seed,
            "fit_policy": self.fit_policy,
            "pban_config": self.pban_config,
            "sgd_config": self.sgd_config,
        }


def _prediction_table(
    weights: NamedWeights, pban_config: PBANConfig, pairs: list[PatchPair]
) -> pd.DataFrame:
    rows = [
        {
            "sr_path": str(p.record.sr_path),
            "hr_path": str(p.record.hr_path),
            "mos": p.record.mos,
            "prediction": predict_pair(weights, pban_config, p),
        }
        for p in pairs
    ]
    return pd.DataFrame(rows, columns=["sr_path", "hr_path", "mos", "prediction"])


def train(
    manifest: Manifest,
    pban_config: PBANConfig,
    sgd_config: SGDConfig,
    folds: int | None = config.FOLDS,
    test_fraction: float = config.TEST_FRACTION,
    out: str | Path | None = None,
    threads: int = config.NUM_THREADS,
    max_steps: int | None = None,
) -> TrainReport:
    """
    Full protocol: optional held-out test split, k-fold cross-validation on the remaining
    records (each fold from the same seeded initialization), then a final fit on all of them.
    The final weights are saved to `out` together with the report JSON and the loss curve.
    """
    started = time.perf_counter()
    manifest.require_records()
    seed = sgd_config.seed
    pairs = load_pairs(manifest.records, pban_config.patch_size, threads)
    logger.info(f"Loaded {len(pairs)} pairs, {sum(p.count for p in pairs)} patches")

    train_idx, test_idx = holdout_split(len(pairs), test_fraction, seed)
    train_pairs = [pairs[i] for i in train_idx]
    trainer = Trainer(pban_config, sgd_config)

    fold_losses, fold_results = [], []
    if folds:
        split = kfold_split(len(train_pairs), folds, seed)
        for fold in range(folds):
            logger.info(f"Fold {fold + 1}/{folds}: sizes {split.sizes()}")
            weights = init_weights(pban_config, seed)
            rng = np.random.default_rng(np.random.SeedSequence([seed, fold]))
            fit = trainer.fit(
                PatchDataset.from_pairs([train_pairs[i] for i in split.training(fold)]),
                weights,
                rng,
                max_steps,
            )
            held = [train_pairs[i] for i in split.validation(fold)]
            table = _prediction_table(weights, pban_config, held)
            metrics = fold_metrics(table["prediction"].to_numpy(), table["mos"].to_numpy())
            logger.info(f"Fold {fold + 1}/{folds} finished: {metrics}")
            fold_losses.append(fit.epoch_losses)
            fold_results.append({"fold": fold, **metrics})

    logger.info(f"Final fit on {len(train_pairs)} records")
    weights = init_weights(pban_config, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, folds or 0]))
    fit = trainer.fit(PatchDataset.from_pairs(train_pairs), weights, rng, max_steps)

    test_metrics = test_predictions = None
    if len(test_idx):
        table = _prediction_table(weights, pban_config, [pairs[i] for i in test_idx])
        test_metrics = fold_metrics(table["prediction"].to_numpy(), table["mos"].to_numpy())
        test_predictions = table.to_dict("records")
        logger.info(f"Held-out test metrics on {len(test_idx)} records: {test_metrics}")

    checkpoint = None
    if out is not None:
        checkpoint = str(save_checkpoint(weights, pban_config, out))

    report = TrainReport(
        epoch_losses=fit.epoch_losses,
        step_losses=fit.step_losses,
        fold_losses=fold_losses,
        fold_metrics=fold_results,
        wall_time=time.perf_counter() - started,
        checkpoint=checkpoint,
        seed=seed,
        pban_config=pban_config.to_dict(),
        sgd_config=sgd_config.to_dict(),
        test_metrics=test_metrics,
        test_predictions=test_predictions,
    )
    if out is not None:
        write_train_report(report, out)
    return report

