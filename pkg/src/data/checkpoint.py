"""
Checkpoint file format (little-endian throughout):

    magic    b"PBN1"
    version  u32 (= 1)
    config   u32 byte length + UTF-8 JSON (keys sorted)
    count    u32
    tensors  count x {u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims, float32 data}

Tensor names are unique and stored in lexicographic order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from src.errors import DecodeError, FormatError
from src.models.pban_config import PBANConfig
from src.models.weights import NamedWeights
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

MAGIC = b"PBN1"
VERSION = 1
_DATA_DTYPE = np.dtype("<f4")


def encode_checkpoint(weights: NamedWeights, config: PBANConfig) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(weights))]
    for name, tensor in weights.items():
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", tensor.ndim)]
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor.data, dtype=_DATA_DTYPE).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(
                f"{self.source}: truncated checkpoint while reading {what} at byte {self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> tuple[NamedWeights, PBANConfig]:
    reader = _Reader(data, source)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{source}: not a PBAN checkpoint (magic {magic!r})")
    (version,) = reader.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")

    (cfg_len,) = reader.unpack("<I", "config length")
    try:
        config = PBANConfig.from_dict(json.loads(reader.take(cfg_len, "config").decode("utf-8")))
    except (ValueError, TypeError, AttributeError) as exc:
        raise DecodeError(f"{source}: corrupt config block ({exc})") from exc

    (count,) = reader.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    previous = None
    for i in range(count):
        (name_len,) = reader.unpack("<H", f"name length of tensor {i}")
        try:
            name = reader.take(name_len, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"{source}: tensor {i} has a corrupt name") from exc
        if previous is not None and name <= previous:
            raise DecodeError(f"{source}: tensor names not sorted and unique at '{name}'")
        (ndim,) = reader.unpack("<B", f"rank of '{name}'")
        shape = reader.unpack(f"<{ndim}I", f"shape of '{name}'")
        size = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(size * _DATA_DTYPE.itemsize, f"data of '{name}'")
        tensors[name] = np.frombuffer(raw, dtype=_DATA_DTYPE).astype(np.float32).reshape(shape)
        previous = name

    if reader.pos != len(data):
        raise DecodeError(f"{source}: {len(data) - reader.pos} trailing bytes after tensor table")
    return NamedWeights(tensors), config


def save_checkpoint(weights: NamedWeights, config: PBANConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(weights, config))
    logger.info(f"Saved checkpoint with {len(weights)} tensors to {path}")
    return path


def load_checkpoint(path: str | Path) -> tuple[NamedWeights, PBANConfig]:
    path = Path(path)
    weights, config = decode_checkpoint(path.read_bytes(), source=str(path))
    logger.info(f"Loaded checkpoint with {len(weights)} tensors from {path}")
    return weights, config
