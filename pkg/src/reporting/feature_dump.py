from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np
from PIL import Image

import config
from src.data.images import ImageRGB, assemble_patches, patch_grid
from src.errors import DataError
from src.models.base import STAGES, ForwardContext
from src.models.pban_config import PBANConfig
from src.models.pban_model import build_model
from src.models.weights import NamedWeights
from src.tensor.tensor import Tensor
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


def stage_filename(block: int, branch: str, stage: str) -> str:
    return f"block{block}_{branch}_{stage}.png"


def normalize_map(values: np.ndarray) -> np.ndarray:
    """Min-max scaling to 8-bit; a constant map becomes all zeros."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def trace_stages(
    weights: NamedWeights,
    pban_config: PBANConfig,
    sr: np.ndarray,
    hr: np.ndarray | None,
    batch_size: int = config.EVAL_BATCH_SIZE,
) -> dict[tuple[int, str, str], np.ndarray]:
    """Channel-mean stage maps [P, s, s] of an eval-mode pass over aligned patch stacks."""
    model = build_model(pban_config)
    maps: dict[tuple[int, str, str], list[np.ndarray]] = defaultdict(list)
    for start in range(0, len(sr), batch_size):
        batch = {"sr": Tensor(sr[start : start + batch_size])}
        if hr is not None and "hr" in pban_config.branches:
            batch["hr"] = Tensor(hr[start : start + batch_size])
        ctx = ForwardContext(mode="eval", trace={})
        model.score(batch, weights, ctx)
        for key, value in ctx.trace.items():
            maps[key].append(value.mean(axis=1))
    return {key: np.concatenate(parts) for key, parts in maps.items()}


def dump_features(
    hr_img: ImageRGB | None,
    sr_img: ImageRGB,
    weights: NamedWeights,
    pban_config: PBANConfig,
    out_dir: str | Path,
) -> list[Path]:
    """
    Writes one grayscale PNG per (block, branch, stage): the channel-mean feature map of every
    patch, tiled back into the image's patch grid and min-max normalized over the whole map.
    """
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        raise FileNotFoundError(f"output directory {out_dir} does not exist")
    size = pban_config.patch_size
    hr = None
    if hr_img is not None:
        if hr_img.pixels.shape != sr_img.pixels.shape:
            raise DataError(
                f"SR {sr_img.width}x{sr_img.height} and HR {hr_img.width}x{hr_img.height} differ"
            )
        hr = patch_grid(hr_img.pixels, size)
    sr = patch_grid(sr_img.pixels, size)
    if len(sr) == 0:
        raise DataError(f"{sr_img.width}x{sr_img.height} image holds no {size}x{size} patch")
    rows, cols = sr_img.height // size, sr_img.width // size

    written = []
    order = list(STAGES)
    traced = trace_stages(weights, pban_config, sr, hr)
    for block, branch, stage in sorted(traced, key=lambda k: (k[0], k[1], order.index(k[2]))):
        patches = traced[(block, branch, stage)][:, None]
        tiled = assemble_patches(patches, rows, cols)[0]
        path = out_dir / stage_filename(block, branch, stage)
        Image.fromarray(normalize_map(tiled)).save(path, format="PNG")
        written.append(path)
    labels = [STAGES[s] for s in order if any(key[2] == s for key in traced)]
    logger.info(f"Wrote {len(written)} stage maps ({', '.join(labels)}) to {out_dir}")
    return written
