from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

import config
from src.errors import DecodeError, FormatError, ParameterError
from src.tensor.tensor import Tensor

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
PPM_MAGIC = b"P6"
_ACCEPTED_MODES = ("L", "LA", "P", "PA", "RGB", "RGBA")
_PPM_SEP = rb"(?:\s|#[^\n]*\n)+"
_PPM_HEADER = re.compile(rb"P6" + _PPM_SEP + rb"(\d+)" + _PPM_SEP + rb"(\d+)" + _PPM_SEP + rb"(\d+)")


@dataclass(frozen=True)
class ImageRGB:
    """RGB image with values in [0, 1], stored channel-first as float32 [3, H, W]."""

    pixels: np.ndarray

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def tensor(self) -> Tensor:
        return Tensor(self.pixels)

    def to_uint8(self) -> np.ndarray:
        """[H, W, 3] 8-bit view for encoders."""
        return np.clip(np.rint(self.pixels.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)


def decode_image(data: bytes, source: str = "<bytes>") -> ImageRGB:
    """
    Decodes PNG (8-bit grayscale/RGB/RGBA/palette) or binary PPM (P6, maxval 255) bytes.

    Alpha is dropped and grayscale is replicated to three channels.
    """
    if not (data.startswith(PNG_SIGNATURE) or data.startswith(PPM_MAGIC)):
        raise FormatError(f"{source}: unsupported image format (magic {data[:4]!r})")
    if data.startswith(PPM_MAGIC):
        header = _PPM_HEADER.match(data)
        if header and int(header.group(3)) != 255:
            raise FormatError(f"{source}: PPM maxval {int(header.group(3))} is not 255")
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            if im.mode not in _ACCEPTED_MODES:
                raise FormatError(f"{source}: unsupported pixel mode {im.mode} (8-bit only)")
            rgb = im.convert("RGBA").convert("RGB") if im.mode != "RGB" else im.copy()
    except FormatError:
        raise
    except (OSError, SyntaxError, ValueError, UnidentifiedImageError) as exc:
        raise DecodeError(f"{source}: cannot decode image ({exc})") from exc
    pixels = np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1) / np.float32(255.0)
    return ImageRGB(np.ascontiguousarray(pixels))


def load_image(path: str | Path) -> ImageRGB:
    path = Path(path)
    return decode_image(path.read_bytes(), source=str(path))


def encode_png(img: ImageRGB) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(img.to_uint8()).save(buffer, format="PNG")
    return buffer.getvalue()


def save_image(img: ImageRGB, path: str | Path) -> None:
    """Writes PNG or, for a .ppm suffix, binary PPM."""
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    Image.fromarray(img.to_uint8()).save(path, format=fmt)


def patch_grid(pixels: np.ndarray, size: int = config.PATCH_SIZE) -> np.ndarray:
    """
    Non-overlapping size x size patches of [3, H, W] in row-major grid order, as
    [rows*cols, 3, size, size]. Right and bottom remainders are discarded.
    """
    if size < 1:
        raise ParameterError(f"patch size must be positive, got {size}")
    C, H, W = pixels.shape
    rows, cols = H // size, W // size
    cropped = pixels[:, : rows * size, : cols * size]
    grid = cropped.reshape(C, rows, size, cols, size).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(grid.reshape(rows * cols, C, size, size))


def extract_patches(img: ImageRGB, size: int = config.PATCH_SIZE) -> list[Tensor]:
    """Patches of `img` as tensors; empty when the image is smaller than one patch."""
    return [Tensor(p) for p in patch_grid(img.pixels, size)]


def assemble_patches(patches: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of `patch_grid` for an exactly divisible image: [rows*cols, C, s, s] -> [C, H, W]."""
    n, C, s, _ = patches.shape
    if n != rows * cols:
        raise FormatError(f"{n} patches do not fill a {rows}x{cols} grid")
    grid = patches.reshape(rows, cols, C, s, s).transpose(2, 0, 3, 1, 4)
    return grid.reshape(C, rows * s, cols * s)
