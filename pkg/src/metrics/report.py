from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.errors import NumericError
from src.metrics.correlation import krcc, plcc, rmse, srcc
from src.metrics.logistic import LogisticParams, logistic_fit_5param
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True)
class MetricReport:
    """SRCC/KRCC on raw predictions, PLCC/RMSE after the logistic remapping."""

    srcc: float
    krcc: float
    plcc: float
    rmse: float
    n: int
    logistic: LogisticParams
    converged: bool

    def to_dict(self) -> dict:
        return {
            "srcc": self.srcc,
            "krcc": self.krcc,
            "plcc": self.plcc,
            "rmse": self.rmse,
            "n": self.n,
            "logistic": self.logistic.to_dict(),
            "converged": self.converged,
        }


def metric_report(pred, mos) -> MetricReport:
    """Full metric set; raises when any metric is undefined for the sample."""
    pred = np.asarray(pred, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    fit = logistic_fit_5param(pred, mos)
    return MetricReport(
        srcc=srcc(pred, mos),
        krcc=krcc(pred, mos),
        plcc=plcc(fit.mapped, mos),
        rmse=rmse(fit.mapped, mos),
        n=int(pred.size),
        logistic=fit.params,
        converged=fit.converged,
    )


def fold_metrics(pred, mos) -> dict[str, float | int | None]:
    """
    Lenient variant for small validation folds: every metric that is undefined for the
    sample is None instead of an error. Without a usable logistic fit, PLCC and RMSE fall back
    to the raw predictions.
    """
    pred = np.asarray(pred, dtype=np.float64)
    mos = np.asarray(mos, dtype=np.float64)
    out: dict[str, float | int | None] = {"n": int(pred.size), "mapped": False}
    mapped = pred
    try:
        mapped = logistic_fit_5param(pred, mos).mapped
        out["mapped"] = True
    except NumericError as exc:
        logger.warning(f"Fold metrics use raw predictions: {exc}")
    for name, fn, x in (
        ("srcc", srcc, pred),
        ("krcc", krcc, pred),
        ("plcc", plcc, mapped),
        ("rmse", rmse, mapped),
    ):
        try:
            out[name] = fn(x, mos)
        except NumericError as exc:
            logger.warning(f"{name} undefined on this fold: {exc}")
            out[name] = None
    return out
