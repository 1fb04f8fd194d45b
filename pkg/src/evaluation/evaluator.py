from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import pandas as pd

import config
from src.data.loader import Manifest, ManifestRecord, load_pair
from src.metrics.report import MetricReport, metric_report
from src.models.pban_config import PBANConfig
from src.models.weights import NamedWeights
from src.reporting.report_generator import metric_summary
from src.training.trainer import predict_pair
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


class Evaluator:
    """
    Scores every record of a manifest with a trained model and compares the predictions
    with the MOS labels.
    Records may be scored on a thread pool; results keep manifest order either way.
    """

    def __init__(
        self,
        weights: NamedWeights,
        pban_config: PBANConfig,
        batch_size: int = config.EVAL_BATCH_SIZE,
        threads: int = config.NUM_THREADS,
    ):
        self.weights = weights
        self.config = pban_config
        self.batch_size = batch_size
        self.threads = threads

    def predict_record(self, record: ManifestRecord) -> dict:
        pair = load_pair(record, self.config.patch_size)
        return {
            "sr_path": str(record.sr_path),
            "hr_path": str(record.hr_path),
            "mos": record.mos,
            "prediction": predict_pair(self.weights, self.config, pair, self.batch_size),
        }

    def predictions(self, manifest: Manifest) -> pd.DataFrame:
        manifest.require_records()
        if self.threads > 1 and len(manifest) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                rows = list(pool.map(self.predict_record, manifest.records))
        else:
            rows = [self.predict_record(r) for r in manifest.records]
        return pd.DataFrame(rows, columns=["sr_path", "hr_path", "mos", "prediction"])

    def run(self, manifest: Manifest) -> tuple[MetricReport, pd.DataFrame]:
        table = self.predictions(manifest)
        report = metric_report(table["prediction"].to_numpy(), table["mos"].to_numpy())
        logger.info(
            f"Evaluation complete. Images: {report.n}, SRCC: {report.srcc:.4f}, "
            f"PLCC: {report.plcc:.4f}"
        )
        logger.debug("\n" + metric_summary(report))
        return report, table


def evaluate(
    weights: NamedWeights,
    pban_config: PBANConfig,
    manifest: Manifest,
    batch_size: int = config.EVAL_BATCH_SIZE,
    threads: int = config.NUM_THREADS,
) -> tuple[MetricReport, pd.DataFrame]:
    return Evaluator(weights, pban_config, batch_size, threads).run(manifest)
