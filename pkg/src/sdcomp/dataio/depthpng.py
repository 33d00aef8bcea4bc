"""16-bit PNG depth maps: depth_m = pixel / 256, pixel 0 means invalid.

Round trips are lossless for depths that are multiples of 1/256 m up to
65535/256 (about 256 m); deeper values saturate.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from ..scaffold import DenseDepthMap

DEPTH_SCALE = 256.0


class BadFormat(ValueError):
    """File is not a readable single-channel 16-bit depth PNG."""


def write_depth_png(path, depth_map: DenseDepthMap) -> None:
    pixels = np.round(depth_map.depth * DEPTH_SCALE)
    pixels = np.clip(pixels, 1, 65535)  # keep valid pixels distinct from the 0 marker
    pixels = np.where(depth_map.validity, pixels, 0).astype(np.uint16)
    Image.fromarray(pixels).save(path, format="PNG")  # uint16 -> mode I;16


def read_depth_png(path) -> DenseDepthMap:
    try:
        with Image.open(path) as img:
            if img.mode not in ("I;16", "I", "I;16B"):
                raise BadFormat(f"{path}: expected 16-bit single-channel PNG, got mode {img.mode}")
            pixels = np.asarray(img, dtype=np.uint32)
    except (OSError, SyntaxError) as err:
        raise BadFormat(f"{path}: {err}") from None
    if pixels.ndim != 2:
        raise BadFormat(f"{path}: expected a single channel, got shape {pixels.shape}")
    if pixels.max(initial=0) > 65535:
        raise BadFormat(f"{path}: pixel values exceed 16 bits")
    validity = pixels > 0
    return DenseDepthMap(pixels.astype(float) / DEPTH_SCALE, validity)


def write_image_png(path, image: np.ndarray) -> None:
    """8-bit RGB PNG from a (3, H, W) float image in [0, 1]."""
    arr = np.asarray(image, dtype=float)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {arr.shape}")
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def read_image_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=float)
    except (OSError, SyntaxError) as err:
        raise BadFormat(f"{path}: {err}") from None
    return rgb.transpose(2, 0, 1) / 255.0
