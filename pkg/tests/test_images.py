import io
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from src.data.images import (
    ImageRGB,
    assemble_patches,
    decode_image,
    extract_patches,
    load_image,
    patch_grid,
    save_image,
)
from src.errors import DecodeError, FormatError, ParameterError

FIXTURES = Path(__file__).parent / "fixtures"


def _png(array: np.ndarray, mode: str) -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(array, mode=mode).save(buffer, format="PNG")
    return buffer.getvalue()


def test_ppm_red_pixel():
    img = load_image(FIXTURES / "red_1x1.ppm")
    assert (img.width, img.height) == (1, 1)
    np.testing.assert_array_equal(img.pixels, [[[1.0]], [[0.0]], [[0.0]]])


def test_white_png_pixel():
    img = load_image(FIXTURES / "white_1x1.png")
    assert (img.width, img.height) == (1, 1)
    np.testing.assert_array_equal(img.pixels, np.ones((3, 1, 1)))


def test_grayscale_is_replicated():
    gray = np.array([[0, 51], [102, 255]], dtype=np.uint8)
    img = decode_image(_png(gray, "L"))
    assert img.pixels.shape == (3, 2, 2)
    for c in range(3):
        np.testing.assert_allclose(img.pixels[c], gray / 255.0, atol=1e-7)


def test_alpha_is_dropped():
    rgba = np.zeros((2, 3, 4), dtype=np.uint8)
    rgba[..., 1] = 255
    rgba[..., 3] = 10
    img = decode_image(_png(rgba, "RGBA"))
    np.testing.assert_array_equal(img.pixels[1], np.ones((2, 3)))
    np.testing.assert_array_equal(img.pixels[0], np.zeros((2, 3)))


def test_unknown_magic_is_format_error():
    with pytest.raises(FormatError, match="GIF8"):
        decode_image(b"GIF89a\x01\x00\x01\x00")


def test_bilevel_png_is_format_error():
    buffer = io.BytesIO()
    Image.new("1", (2, 2), 1).save(buffer, format="PNG")
    with pytest.raises(FormatError, match="mode 1"):
        decode_image(buffer.getvalue())


@pytest.mark.parametrize("maxval", [15, 65535])
def test_ppm_maxval_other_than_255_is_format_error(maxval):
    depth = 2 if maxval > 255 else 1
    data = f"P6\n# comment\n1 1\n{maxval}\n".encode() + bytes(3 * depth)
    with pytest.raises(FormatError, match=f"maxval {maxval}"):
        decode_image(data)


def test_truncated_png_is_decode_error():
    data = _png(np.zeros((16, 16, 3), dtype=np.uint8), "RGB")
    with pytest.raises(DecodeError):
        decode_image(data[:40])


def test_png_round_trip_is_lossless(tmp_path):
    pixels = np.random.default_rng(0).integers(0, 256, size=(3, 5, 7)).astype(np.float32) / 255
    save_image(ImageRGB(pixels), tmp_path / "x.png")
    np.testing.assert_array_equal(load_image(tmp_path / "x.png").pixels, pixels)


@pytest.mark.parametrize("height,width,expected", [(64, 96, 6), (32, 32, 1), (31, 200, 0), (70, 33, 2)])
def test_patch_count(height, width, expected):
    img = ImageRGB(np.zeros((3, height, width), dtype=np.float32))
    assert len(extract_patches(img, 32)) == expected


def test_patch_count_matches_floor_arithmetic():
    rng = np.random.default_rng(1)
    for _ in range(20):
        h, w, s = rng.integers(1, 60), rng.integers(1, 60), rng.integers(1, 12)
        assert len(patch_grid(np.zeros((3, h, w)), s)) == (h // s) * (w // s)


def test_single_patch_is_the_image():
    pixels = np.random.default_rng(2).uniform(size=(3, 32, 32)).astype(np.float32)
    (patch,) = extract_patches(ImageRGB(pixels), 32)
    np.testing.assert_array_equal(patch.data, pixels)


def test_patches_are_row_major():
    pixels = np.zeros((3, 4, 6), dtype=np.float32)
    for r in range(2):
        for c in range(3):
            pixels[:, 2 * r : 2 * r + 2, 2 * c : 2 * c + 2] = 3 * r + c
    grid = patch_grid(pixels, 2)
    np.testing.assert_array_equal(grid[:, 0, 0, 0], np.arange(6))


def test_assemble_inverts_patching():
    pixels = np.random.default_rng(3).uniform(size=(3, 24, 40))
    np.testing.assert_array_equal(assemble_patches(patch_grid(pixels, 8), 3, 5), pixels)


def test_bad_patch_size():
    with pytest.raises(ParameterError):
        patch_grid(np.zeros((3, 4, 4)), 0)
