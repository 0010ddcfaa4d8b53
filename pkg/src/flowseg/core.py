"""Shared domain operations: normalization, sigmoid, thresholding, seed derivation.

All image-like data is float32 numpy (H, W) on the IO side; the model/flow
stack works on float32 torch tensors of the same layout. Operations here are
pure and safe to call concurrently.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def normalize_image(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize a single image to span [0, 1] exactly.

    Raises ValueError on non-finite input or a constant (degenerate) image.
    """
    arr = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        raise ValueError("degenerate image: max == min")
    out = (arr - lo) / (hi - lo)
    return out.astype(np.float32)


def sigmoid(x):
    """Elementwise logistic 1 / (1 + exp(-x)) for numpy arrays or torch tensors."""
    if isinstance(x, torch.Tensor):
        return torch.sigmoid(x)
    arr = np.asarray(x, dtype=np.float32)
    # Split by sign to avoid overflow in exp for large magnitudes.
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    e = np.exp(arr[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def threshold(prob: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Binarize a probability map: 1 where prob >= tau (ties go to foreground)."""
    if not (0.0 < tau < 1.0):
        raise ValueError(f"threshold tau must be in (0, 1), got {tau}")
    prob = np.asarray(prob)
    return (prob >= tau).astype(np.uint8)


def check_image(image: np.ndarray) -> None:
    """Validate the Image invariants: finite, in [0,1], H and W >= 8, divisible by 16."""
    if image.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {image.shape}")
    h, w = image.shape
    if h < 8 or w < 8 or h % 16 != 0 or w % 16 != 0:
        raise ValueError(f"image size {h}x{w} must be >= 8 and divisible by 16")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")


def check_mask(mask: np.ndarray, shape: tuple[int, int] | None = None) -> None:
    """Validate the Mask invariants: values in {0, 1}, optional shape match."""
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise ValueError(f"mask must contain only 0 and 1, found values {values[:8]}")
    if shape is not None and tuple(mask.shape) != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match image shape {shape}")


def derive_seed(*parts) -> int:
    """Derive a stable 63-bit seed from any mix of ints and strings.

    Used everywhere randomness is needed so that runs are reproducible and
    resumable without carrying mutable RNG state around.
    """
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFFFFFFFFFFFFFF
