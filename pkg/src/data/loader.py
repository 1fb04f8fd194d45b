from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

import config
from src.data.images import load_image, patch_grid
from src.errors import DataError, FormatError
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

MANIFEST_COLUMNS = ["sr_path", "hr_path", "mos"]


@dataclass(frozen=True)
class ManifestRecord:
    sr_path: Path
    hr_path: Path
    mos: float
    row: int  # 1-based data row in the manifest

    def describe(self) -> str:
        return f"record {self.row} (sr={self.sr_path}, hr={self.hr_path})"


@dataclass(frozen=True)
class PatchPair:
    """Aligned patch stacks [P, 3, s, s] of one record."""

    record: ManifestRecord
    hr: np.ndarray
    sr: np.ndarray
    grid: tuple[int, int]

    @property
    def count(self) -> int:
        return self.sr.shape[0]


@dataclass(frozen=True)
class Manifest:
    records: list[ManifestRecord]
    path: Path | None = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def subset(self, indices) -> Manifest:
        return Manifest([self.records[i] for i in indices], self.path)

    def require_records(self) -> None:
        if not self.records:
            raise DataError(f"manifest {self.path or '<memory>'} has no records")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "sr_path": [str(r.sr_path) for r in self.records],
                "hr_path": [str(r.hr_path) for r in self.records],
                "mos": [r.mos for r in self.records],
            }
        )


class ManifestLoader:
    """Loads and validates an `sr_path,hr_path,mos` manifest CSV."""

    def __init__(self, csv_path: str | Path):
        self.csv_path = Path(csv_path)

    def load(self) -> Manifest:
        if not self.csv_path.exists():
            logger.error(f"Manifest not found at {self.csv_path}")
            raise FileNotFoundError(f"Manifest not found at {self.csv_path}")

        try:
            df = pd.read_csv(self.csv_path, dtype=str, keep_default_na=False, skipinitialspace=True)
            df = df.fillna("")
        except pd.errors.EmptyDataError as exc:
            raise FormatError(f"{self.csv_path}: line 1: expected sr_path,hr_path,mos") from exc
        except pd.errors.ParserError as exc:
            raise FormatError(f"{self.csv_path}: malformed CSV ({exc})") from exc

        header = [str(c).strip() for c in df.columns]
        if header != MANIFEST_COLUMNS:
            logger.error(f"Bad manifest header in {self.csv_path}: {header}")
            raise FormatError(
                f"{self.csv_path}: line 1: expected sr_path,hr_path,mos, got {','.join(header)}"
            )

        mos = pd.to_numeric(df["mos"].str.strip(), errors="coerce")
        bad = ~np.isfinite(mos.to_numpy(dtype=float))
        if bad.any():
            i = int(np.argmax(bad))
            raise FormatError(
                f"{self.csv_path}: row {i + 1} (line {i + 2}): mos {df['mos'].iloc[i]!r} "
                f"is not a finite number"
            )

        base = self.csv_path.parent
        records = []
        for i, (sr, hr, value) in enumerate(zip(df["sr_path"], df["hr_path"], mos)):
            if not sr.strip() or not hr.strip():
                raise FormatError(f"{self.csv_path}: row {i + 1} (line {i + 2}): empty path")
            records.append(
                ManifestRecord(_resolve(base, sr), _resolve(base, hr), float(value), i + 1)
            )

        logger.info(f"Successfully loaded {len(records)} records from {self.csv_path}")
        return Manifest(records, self.csv_path)


def _resolve(base: Path, raw: str) -> Path:
    path = Path(raw.strip())
    return path if path.is_absolute() else base / path


def load_manifest(path: str | Path) -> Manifest:
    return ManifestLoader(path).load()


def load_pair(record: ManifestRecord, patch_size: int = config.PATCH_SIZE) -> PatchPair:
    """Decodes one record's SR/HR images and cuts their aligned patch grids."""
    try:
        sr = load_image(record.sr_path)
        hr = load_image(record.hr_path)
    except DataError as exc:
        raise type(exc)(f"{record.describe()}: {exc}") from exc
    if sr.pixels.shape != hr.pixels.shape:
        raise DataError(
            f"{record.describe()}: SR {sr.width}x{sr.height} and HR {hr.width}x{hr.height} differ"
        )
    grid = (sr.height // patch_size, sr.width // patch_size)
    if grid[0] * grid[1] == 0:
        raise DataError(
            f"{record.describe()}: {sr.width}x{sr.height} image holds no {patch_size}x{patch_size} patch"
        )
    return PatchPair(record, patch_grid(hr.pixels, patch_size), patch_grid(sr.pixels, patch_size), grid)


def load_pairs(
    records: list[ManifestRecord],
    patch_size: int = config.PATCH_SIZE,
    threads: int = config.NUM_THREADS,
) -> list[PatchPair]:
    """Loads records in order; decoding runs on a thread pool when `threads` > 1."""
    if threads <= 1 or len(records) <= 1:
        return [load_pair(r, patch_size) for r in records]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: load_pair(r, patch_size), records))
