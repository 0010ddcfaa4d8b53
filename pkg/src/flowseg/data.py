"""Dataset ingestion, deterministic splitting, and training-time augmentation.

Reads the images/ + masks/ directory layout written by datagen; external
datasets converted to the same layout load identically. Augmentation is
on-the-fly and is only ever applied to training samples.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import pngio
from .core import normalize_image


@dataclass
class SamplePair:
    """One image/mask pair; image float32 in [0,1], mask uint8 in {0,1}."""

    image: np.ndarray
    mask: np.ndarray
    name: str


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    shuffle_seed: int = 0

    def validate(self) -> None:
        fractions = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f < 0 for f in fractions):
            raise ValueError(f"split fractions must be >= 0, got {fractions}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")


def load_dataset(root: str) -> list[SamplePair]:
    """Load all pairs under <root>/images and <root>/masks, sorted by name.

    Images are min-max normalized; any nonzero mask pixel becomes 1. Orphan
    files and image/mask size mismatches are hard errors naming the culprit.
    """
    images_dir = os.path.join(root, "images")
    masks_dir = os.path.join(root, "masks")
    for d in (images_dir, masks_dir):
        if not os.path.isdir(d):
            raise FileNotFoundError(f"missing dataset directory: {d}")
    image_names = {os.path.splitext(f)[0] for f in os.listdir(images_dir) if f.endswith(".png")}
    mask_names = {os.path.splitext(f)[0] for f in os.listdir(masks_dir) if f.endswith(".png")}
    orphans = image_names.symmetric_difference(mask_names)
    if orphans:
        raise ValueError(f"unpaired dataset files (no image/mask counterpart): {sorted(orphans)}")

    pairs = []
    for name in sorted(image_names):
        raw = pngio.read_gray_png(os.path.join(images_dir, name + ".png"))
        mask_raw = pngio.read_gray_png(os.path.join(masks_dir, name + ".png"))
        if raw.shape != mask_raw.shape:
            raise ValueError(
                f"size mismatch for {name!r}: image {raw.shape} vs mask {mask_raw.shape}"
            )
        pairs.append(
            SamplePair(
                image=normalize_image(raw),
                mask=(mask_raw > 0).astype(np.uint8),
                name=name,
            )
        )
    return pairs


def split(
    pairs: list[SamplePair], spec: SplitSpec
) -> tuple[list[SamplePair], list[SamplePair], list[SamplePair]]:
    """Deterministic shuffle + contiguous slices; test absorbs rounding remainder."""
    spec.validate()
    n = len(pairs)
    if n < 3:
        raise ValueError(f"need at least 3 samples to split, got {n}")
    order = np.random.default_rng(spec.shuffle_seed).permutation(n)
    shuffled = [pairs[i] for i in order]
    n_train = int(math.floor(spec.train_fraction * n + 0.5))
    n_val = int(math.floor(spec.val_fraction * n + 0.5))
    train = shuffled[:n_train]
    val = shuffled[n_train : n_train + n_val]
    test = shuffled[n_train + n_val :]
    for part, frac, label in (
        (train, spec.train_fraction, "train"),
        (val, spec.val_fraction, "val"),
        (test, spec.test_fraction, "test"),
    ):
        if frac > 0 and not part:
            raise ValueError(f"{label} split is empty although its fraction is {frac}")
    return train, val, test


def apply_transform(
    image: np.ndarray,
    mask: np.ndarray,
    hflip: bool,
    vflip: bool,
    angle_deg: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply flips then rotation; bilinear for the image, nearest for the mask.

    Out-of-frame regions fill with 0; the image is clamped back to [0,1]
    because bilinear interpolation can overshoot.
    """
    img = image
    msk = mask
    if hflip:
        img = img[:, ::-1]
        msk = msk[:, ::-1]
    if vflip:
        img = img[::-1, :]
        msk = msk[::-1, :]
    if angle_deg != 0.0:
        img = ndimage.rotate(img, angle_deg, reshape=False, order=1, mode="constant", cval=0.0)
        img = np.clip(img, 0.0, 1.0)
        msk = ndimage.rotate(msk, angle_deg, reshape=False, order=0, mode="constant", cval=0)
    return np.ascontiguousarray(img, dtype=np.float32), np.ascontiguousarray(msk, dtype=np.uint8)


def augment(sample: SamplePair, rng: np.random.Generator) -> SamplePair:
    """Random horizontal/vertical flips (p=0.5 each) and rotation in [-15, +15] deg."""
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    angle = float(rng.uniform(-15.0, 15.0))
    image, mask = apply_transform(sample.image, sample.mask, hflip, vflip, angle)
    return SamplePair(image=image, mask=mask, name=sample.name)
