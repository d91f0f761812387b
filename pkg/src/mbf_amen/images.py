"""Image decoding / encoding (Pillow) and bilinear resampling.

Arrays are channel-first ``[C, H, W]`` float64 with values in [0, 1].
"""
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import ArgumentError, DecodeError, ShapeError

EIGHT_BIT_MODES = ("L", "LA", "RGB", "RGBA", "RGBX", "P", "PA", "CMYK", "YCbCr")


def read_image(path):
    """Decode an 8-bit grayscale or RGB image (PNG, PGM, ...) to ``[C, H, W]``.

    255 maps to 1.0 exactly, 0 to 0.0. Gray with alpha becomes grayscale,
    the other 8-bit modes become RGB. 16-bit, float and 1-bit images raise
    DecodeError.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode not in EIGHT_BIT_MODES:
                raise DecodeError(f"{path}: not an 8-bit image (mode {img.mode})")
            if img.mode == "LA":
                img = img.convert("L")
            elif img.mode != "L":
                img = img.convert("RGB")
            pixels = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DecodeError(f"could not decode {path}: {e}") from e
    if pixels.ndim == 2:
        pixels = pixels[None]
    else:
        pixels = np.moveaxis(pixels, -1, 0)
    return pixels.astype(np.float64) / 255.0


def to_uint8(values):
    return np.round(np.clip(np.asarray(values, dtype=np.float64), 0, 1) * 255).astype(
        np.uint8
    )


def write_pgm(path, values):
    """8-bit binary PGM (P5); 0 -> 0 and 1 -> 255, values outside [0, 1] clipped"""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ShapeError("PGM export needs a single [H, W] map", values.shape)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(values)).save(path, format="PPM")


def write_image(path, image):
    """Write a ``[C, H, W]`` image; C must be 1 (grayscale) or 3 (RGB)"""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ShapeError("can only write 1 or 3 channel images", image.shape)
    path = Path(path)
    if image.shape[0] == 1:
        if path.suffix.lower() == ".pgm":
            write_pgm(path, image[0])
            return
        pil = Image.fromarray(to_uint8(image[0]))
    else:
        pil = Image.fromarray(to_uint8(np.moveaxis(image, 0, -1)))
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path)


def _axis_weights(n_in, n_out):
    # half-pixel centres, edges clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lower = np.floor(src).astype(np.int64)
    upper = np.minimum(lower + 1, n_in - 1)
    frac = src - lower
    return lower, upper, frac


def bilinear_resize(values, height, width):
    """Bilinear resampling of the last two axes to ``(height, width)``.

    Pixel centres sit at ``i + 0.5``; sample positions outside the source
    grid are clamped to the border. Matching extents return a copy.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim < 2:
        raise ShapeError("resize needs at least two axes", values.shape)
    if height < 1 or width < 1:
        raise ArgumentError(f"target extent must be >= 1, got {(height, width)}")
    h_in, w_in = values.shape[-2:]
    if (h_in, w_in) == (height, width):
        return values.copy()
    lo, hi, fy = _axis_weights(h_in, height)
    rows = (
        values[..., lo, :] * (1 - fy)[:, None] + values[..., hi, :] * fy[:, None]
    )
    lo, hi, fx = _axis_weights(w_in, width)
    return rows[..., lo] * (1 - fx) + rows[..., hi] * fx
