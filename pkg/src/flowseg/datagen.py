"""Synthetic fluorescence filament scenes with exactly aligned ground-truth masks.

Geometry is a constant-speed random walk of headings per filament; the scene
is rasterized on a supersampled grid so the image render is anti-aliased while
the mask stays the exact pixel support of the rendered tubes. The imaging
forward model is: ideal render -> Gaussian PSF blur -> background -> Poisson
shot noise -> additive Gaussian read noise -> per-image min-max normalization.

Quantitative defaults (filament density, SNR, widths) are this package's own
regime choices; they target visibly thin, sparse filaments with foreground
fractions of roughly 1-15%.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .core import derive_seed, normalize_image

SUPERSAMPLE = 4  # rasterization happens on an ss x ss subpixel grid


@dataclass(frozen=True)
class FilamentSpec:
    """Geometry and brightness of the simulated filaments."""

    num_filaments: tuple[int, int] = (2, 4)
    length_px: tuple[float, float] = (24.0, 56.0)
    curvature_sigma: float = 0.15  # radians of heading noise per 1-px step
    width_px: float = 2.5
    intensity: float = 1.0
    decay_mode: str = "none"  # "none" (uniform) or "linear" (fades along arc)
    decay_fraction: float = 0.0

    def validate(self) -> None:
        lo, hi = self.num_filaments
        if lo < 0 or lo > hi:
            raise ValueError(f"num_filaments range ({lo}, {hi}) must satisfy 0 <= min <= max")
        if self.length_px[0] <= 0 or self.length_px[0] > self.length_px[1]:
            raise ValueError(f"length_px range {self.length_px} must be positive and ordered")
        if self.curvature_sigma < 0:
            raise ValueError("curvature_sigma must be >= 0")
        if self.width_px < 1.0:
            raise ValueError(f"width_px must be >= 1, got {self.width_px}")
        if not (0.0 < self.intensity <= 1.0):
            raise ValueError(f"intensity must be in (0, 1], got {self.intensity}")
        if self.decay_mode not in ("none", "linear"):
            raise ValueError(f"decay_mode must be 'none' or 'linear', got {self.decay_mode!r}")
        if not (0.0 <= self.decay_fraction < 1.0):
            raise ValueError(f"decay_fraction must be in [0, 1), got {self.decay_fraction}")


@dataclass(frozen=True)
class NoiseSpec:
    """Imaging noise of the forward model."""

    psf_sigma_px: float = 1.0
    background_level: float = 0.08
    photon_scale: float = 200.0
    read_noise_sigma: float = 0.01

    def validate(self) -> None:
        if self.psf_sigma_px < 0:
            raise ValueError("psf_sigma_px must be >= 0")
        if not (0.0 <= self.background_level < 1.0):
            raise ValueError(f"background_level must be in [0, 1), got {self.background_level}")
        if self.photon_scale <= 0:
            raise ValueError("photon_scale must be > 0")
        if self.read_noise_sigma < 0:
            raise ValueError("read_noise_sigma must be >= 0")


def simple_spec() -> FilamentSpec:
    """Uniform-brightness filaments."""
    return FilamentSpec(decay_mode="none", decay_fraction=0.0)


def complex_spec(decay_fraction: float = 0.8) -> FilamentSpec:
    """Filaments whose brightness fades linearly along their arc length."""
    return FilamentSpec(decay_mode="linear", decay_fraction=decay_fraction)


def sample_paths(
    fspec: FilamentSpec, height: int, width: int, rng: np.random.Generator
) -> list[np.ndarray]:
    """Draw filament centerlines as (n_points, 2) float arrays of (row, col).

    Points are spaced 1 px apart along the arc. Headings bounce off the frame
    borders so every filament stays fully inside the image (one connected
    component per filament).
    """
    margin = fspec.width_px / 2.0 + 2.0
    count = int(rng.integers(fspec.num_filaments[0], fspec.num_filaments[1] + 1))
    paths = []
    for _ in range(count):
        length = float(rng.uniform(fspec.length_px[0], fspec.length_px[1]))
        n_steps = max(1, int(round(length)))
        r = float(rng.uniform(margin, height - 1 - margin))
        c = float(rng.uniform(margin, width - 1 - margin))
        heading = float(rng.uniform(0.0, 2.0 * math.pi))
        pts = [(r, c)]
        for _ in range(n_steps):
            heading += float(rng.normal(0.0, fspec.curvature_sigma))
            nr = r + math.sin(heading)
            nc = c + math.cos(heading)
            if nr < margin or nr > height - 1 - margin:
                heading = -heading
                nr = r + math.sin(heading)
            if nc < margin or nc > width - 1 - margin:
                heading = math.pi - heading
                nr = r + math.sin(heading)
                nc = c + math.cos(heading)
            r = min(max(nr, margin), height - 1 - margin)
            c = min(max(nc, margin), width - 1 - margin)
            pts.append((r, c))
        paths.append(np.array(pts, dtype=np.float64))
    return paths


def _arc_intensity(fspec: FilamentSpec, frac_along: np.ndarray) -> np.ndarray:
    """Brightness at fractional arc positions, applying the decay mode."""
    if fspec.decay_mode == "linear":
        return fspec.intensity * (1.0 - fspec.decay_fraction * frac_along)
    return np.full_like(frac_along, fspec.intensity)


def rasterize_scene(
    paths: list[np.ndarray],
    fspec: FilamentSpec,
    height: int,
    width: int,
    ss: int = SUPERSAMPLE,
) -> tuple[np.ndarray, np.ndarray]:
    """Render centerlines into (ideal_image, mask).

    The ideal image is the anti-aliased, decay-weighted tube render in [0, 1];
    the mask is its exact binary support (every pixel the tube touches). Both
    are produced from the same supersampled occupancy so the superset
    invariant holds by construction.
    """
    hs, ws = height * ss, width * ss
    center_val = np.zeros((hs, ws), dtype=np.float32)
    for path in paths:
        seg_len = np.linalg.norm(np.diff(path, axis=0), axis=1)
        total = float(seg_len.sum())
        if total <= 0:
            total = 1.0
        # Dense resample at one-subpixel steps so stamped centers leave no gaps.
        arc = np.concatenate([[0.0], np.cumsum(seg_len)])
        dense_s = np.arange(0.0, arc[-1] + 1e-9, 1.0 / ss)
        rows = np.interp(dense_s, arc, path[:, 0])
        cols = np.interp(dense_s, arc, path[:, 1])
        vals = _arc_intensity(fspec, dense_s / total).astype(np.float32)
        ri = np.clip(np.round(rows * ss).astype(np.int64), 0, hs - 1)
        ci = np.clip(np.round(cols * ss).astype(np.int64), 0, ws - 1)
        np.maximum.at(center_val, (ri, ci), vals)

    occupied = center_val > 0
    if not occupied.any():
        return np.zeros((height, width), np.float32), np.zeros((height, width), np.uint8)

    # Distance to the nearest centerline subpixel defines the tube; the
    # nearest-point indices carry the local brightness outward.
    dist, (ir, ic) = ndimage.distance_transform_edt(~occupied, return_indices=True)
    radius = fspec.width_px / 2.0 * ss
    tube = dist <= radius
    render_ss = np.where(tube, center_val[ir, ic], 0.0).astype(np.float32)

    render = render_ss.reshape(height, ss, width, ss).mean(axis=(1, 3))
    mask = (tube.reshape(height, ss, width, ss).any(axis=(1, 3))).astype(np.uint8)
    return render, mask


def apply_noise(render: np.ndarray, nspec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Run the imaging forward model on an ideal render; returns the raw frame."""
    blurred = render
    if nspec.psf_sigma_px > 0:
        blurred = ndimage.gaussian_filter(render, sigma=nspec.psf_sigma_px)
    signal = blurred + nspec.background_level
    photons = rng.poisson(signal * nspec.photon_scale).astype(np.float64) / nspec.photon_scale
    if nspec.read_noise_sigma > 0:
        photons = photons + rng.normal(0.0, nspec.read_noise_sigma, size=photons.shape)
    return photons.astype(np.float32)


def generate_sample(
    fspec: FilamentSpec,
    nspec: NoiseSpec,
    height: int,
    width: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Generate one (image, mask) pair, deterministic in all arguments.

    Geometry and noise use independent seed streams derived from `seed`, so
    the mask depends only on the geometry stream.
    """
    fspec.validate()
    nspec.validate()
    if height % 16 != 0 or width % 16 != 0:
        raise ValueError(f"height and width must be divisible by 16, got {height}x{width}")
    geom_rng = np.random.default_rng(derive_seed(seed, "geom"))
    noise_rng = np.random.default_rng(derive_seed(seed, "noise"))
    paths = sample_paths(fspec, height, width, geom_rng)
    render, mask = rasterize_scene(paths, fspec, height, width)
    raw = apply_noise(render, nspec, noise_rng)
    return normalize_image(raw), mask


def generate_dataset(
    fspec: FilamentSpec,
    nspec: NoiseSpec,
    height: int,
    width: int,
    count: int,
    seed: int,
    out_dir: str,
    workers: int = 1,
) -> dict:
    """Write `count` image/mask PNG pairs plus a manifest; returns the manifest.

    Layout: <out_dir>/images/<name>.png (16-bit gray), <out_dir>/masks/<name>.png
    (8-bit {0,255}), <out_dir>/manifest (JSON). Per-sample seed = seed + index,
    so regeneration with the same arguments is byte-identical and generation
    may fan out across workers.
    """
    from . import pngio

    fspec.validate()
    nspec.validate()
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    images_dir = os.path.join(out_dir, "images")
    masks_dir = os.path.join(out_dir, "masks")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(masks_dir, exist_ok=True)

    names = [f"sample_{i:05d}" for i in range(count)]
    completed: list[str] = []

    def build(i: int) -> None:
        image, mask = generate_sample(fspec, nspec, height, width, seed + i)
        pngio.write_image_png(os.path.join(images_dir, names[i] + ".png"), image)
        pngio.write_mask_png(os.path.join(masks_dir, names[i] + ".png"), mask)

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for i, _ in enumerate(pool.map(build, range(count))):
                    completed.append(names[i])
        else:
            for i in range(count):
                build(i)
                completed.append(names[i])
    except OSError as exc:
        raise RuntimeError(
            f"dataset generation aborted after {len(completed)} of {count} samples "
            f"({exc}); completed: {', '.join(completed) or 'none'}"
        ) from exc

    manifest = {
        "count": count,
        "height": height,
        "width": width,
        "base_seed": seed,
        "filaments": asdict(fspec),
        "noise": asdict(nspec),
        "samples": [
            {"name": names[i], "seed": seed + i, "split": _split_hint(i, count)}
            for i in range(count)
        ],
    }
    with open(os.path.join(out_dir, "manifest"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def _split_hint(index: int, count: int) -> str:
    """Informational 80/10/10 split hint; the real split lives in data.split."""
    if index < round(0.8 * count):
        return "train"
    if index < round(0.9 * count):
        return "val"
    return "test"
