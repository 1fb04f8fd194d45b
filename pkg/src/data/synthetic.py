"""Synthetic SR/HR pairs for smoke runs and tests."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from src.data.images import ImageRGB, save_image
from src.errors import ParameterError
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True)
class SyntheticPair:
    sr: ImageRGB
    hr: ImageRGB
    mos: float


def _smooth_field(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Low-frequency RGB texture in [0.1, 0.9]: a sum of a few random plane waves."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.empty((3, height, width))
    for c in range(3):
        acc = np.zeros((height, width))
        for _ in range(3):
            fy, fx = rng.uniform(-0.25, 0.25, size=2)
            acc += np.cos(2 * np.pi * (fy * yy + fx * xx) / 4 + rng.uniform(0, 2 * np.pi))
        img[c] = 0.5 + 0.4 * acc / 3
    return img


def _quantize(pixels: np.ndarray) -> ImageRGB:
    """8-bit rounding, so in-memory pairs equal their decoded PNG files."""
    levels = np.rint(np.clip(pixels, 0, 1) * 255).astype(np.float32)
    return ImageRGB(levels / np.float32(255.0))


def make_synthetic_pairs(
    n: int, size: int = 32, seed: int = 0, mos: str = "distortion"
) -> list[SyntheticPair]:
    """
    Builds `n` pairs of size x size images.

    Each SR image is its HR reference blended with noise at a random strength d in [0, 1].
    With mos="distortion" the label is 1 - d, a target a network can learn; with mos="random"
    the label is an independent U(0, 1) draw, for pure memorization runs.
    """
    if n < 1 or size < 1:
        raise ParameterError(f"need n >= 1 and size >= 1, got n={n}, size={size}")
    if mos not in ("distortion", "random"):
        raise ParameterError(f"mos must be 'distortion' or 'random', got {mos!r}")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        hr = _smooth_field(rng, size, size)
        strength = rng.uniform(0.0, 1.0)
        noise = rng.uniform(0.0, 1.0, size=hr.shape)
        sr = (1 - 0.6 * strength) * hr + 0.6 * strength * noise
        label = 1.0 - strength if mos == "distortion" else rng.uniform(0.0, 1.0)
        pairs.append(SyntheticPair(_quantize(sr), _quantize(hr), float(label)))
    return pairs


def write_synthetic_fixture(
    out_dir: str | Path, n: int = 8, size: int = 32, seed: int = 0, mos: str = "distortion"
) -> Path:
    """Writes the pairs as PNG files plus `manifest.csv` (relative paths); returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, pair in enumerate(make_synthetic_pairs(n, size, seed, mos)):
        sr_name, hr_name = f"sr_{i:03d}.png", f"hr_{i:03d}.png"
        save_image(pair.sr, out_dir / sr_name)
        save_image(pair.hr, out_dir / hr_name)
        rows.append({"sr_path": sr_name, "hr_path": hr_name, "mos": round(pair.mos, 6)})
    manifest = out_dir / "manifest.csv"
    pd.DataFrame(rows, columns=["sr_path", "hr_path", "mos"]).to_csv(manifest, index=False)
    logger.info(f"Wrote {n} synthetic pairs to {out_dir}")
    return manifest
