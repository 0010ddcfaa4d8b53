"""PNG read/write helpers for the dataset and prediction layouts.

Images are 16-bit grayscale PNG (value = round(p * 65535)), masks are 8-bit
PNG with values {0, 255}, overlays are 8-bit RGB.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image as PILImage


def write_image_png(path: str, image01: np.ndarray) -> None:
    """Write a float [0,1] image as 16-bit grayscale PNG."""
    arr = np.asarray(image01, dtype=np.float64)
    data = np.round(np.clip(arr, 0.0, 1.0) * 65535.0).astype(np.uint16)
    PILImage.fromarray(data).save(path)  # uint16 -> I;16 grayscale


def write_mask_png(path: str, mask01: np.ndarray) -> None:
    """Write a {0,1} mask as 8-bit PNG with values {0, 255}."""
    data = (np.asarray(mask01) > 0).astype(np.uint8) * 255
    PILImage.fromarray(data, mode="L").save(path)


def write_rgb_png(path: str, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as RGB PNG."""
    PILImage.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path)


def read_gray_png(path: str) -> np.ndarray:
    """Read a grayscale PNG as a 2-D integer array (uint8 or uint16 range).

    Color files are rejected; the pipeline only handles single-channel data.
    """
    with PILImage.open(path) as im:
        if im.mode in ("L", "P"):
            return np.asarray(im.convert("L"), dtype=np.uint8)
        if im.mode in ("I;16", "I;16B", "I"):
            return np.asarray(im, dtype=np.int64).astype(np.uint16)
        raise ValueError(
            f"{os.path.basename(path)}: unsupported PNG mode {im.mode!r}; "
            "convert to 8- or 16-bit grayscale first"
        )
