from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
from matplotlib.figure import Figure

import config
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


def artifact_path(checkpoint: str | Path, suffix: str) -> Path:
    """`model.pbn` + `.report.json` -> `model.pbn.report.json`, beside the checkpoint."""
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.name + suffix)


def save_json(data: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def plot_loss_curve(report, path: str | Path) -> Path:
    """Per-step training loss of the final fit, its epoch means, and the epoch means of each fold."""
    path = Path(path)
    fig = Figure(figsize=(8, 4.5))
    ax = fig.subplots()
    steps = np.arange(1, len(report.step_losses) + 1)
    ax.plot(steps, report.step_losses, color="tab:blue", alpha=0.35, lw=0.8, label="step loss")
    if report.epoch_losses:
        per_epoch = len(report.step_losses) / len(report.epoch_losses)
        ends = per_epoch * np.arange(1, len(report.epoch_losses) + 1)
        ax.plot(ends, report.epoch_losses, color="tab:blue", marker="o", ms=3, label="epoch mean")
        for fold, losses in enumerate(report.fold_losses):
            ends = per_epoch * np.arange(1, len(losses) + 1)
            ax.plot(ends, losses, ls="--", lw=0.9, label=f"fold {fold + 1}")
    ax.set_xlabel("SGD step")
    ax.set_ylabel("MSE")
    if min(report.step_losses, default=0.0) > 0:
        ax.set_yscale("log")
    ax.set_title("Training loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    return path


def write_train_report(report, checkpoint: str | Path) -> tuple[Path, Path]:
    """Writes the report JSON and the loss curve PNG beside the checkpoint."""
    json_path = save_json(report.to_dict(), artifact_path(checkpoint, config.REPORT_SUFFIX))
    plot_path = plot_loss_curve(report, artifact_path(checkpoint, config.LOSS_PLOT_SUFFIX))
    logger.info(f"Training report saved to {json_path}, loss curve to {plot_path}")
    return json_path, plot_path


def write_predictions(table: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    table.to_csv(path, index=False, float_format="%.8g")
    logger.info(f"Predictions for {len(table)} records saved to {path}")
    return path


def metric_summary(report) -> str:
    """Human-readable block for a MetricReport (goes to the log, never to stdout)."""
    lines = [
        "=" * 40,
        f"QUALITY METRICS over {report.n} images",
        "=" * 40,
        f"SRCC: {report.srcc:.4f}",
        f"KRCC: {report.krcc:.4f}",
        f"PLCC: {report.plcc:.4f} (after logistic mapping)",
        f"RMSE: {report.rmse:.4f} (after logistic mapping)",
    ]
    if not report.converged:
        lines.append("warning: logistic fit did not converge")
    lines.append("=" * 40)
    return "\n".join(lines)
