"""Euler-integration inference: noise mask -> probability map -> binary mask."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch

from . import pngio
from .core import derive_seed, threshold
from .flow import EulerSchedule, euler_integrate, sample_noise
from .model import FlowUNet, forward_baseline, forward_mtflow


@dataclass(frozen=True)
class InferenceConfig:
    num_steps: int = 10
    seed: int = 0
    tau: float = 0.5
    emit_trajectory: bool = False
    ensemble: int = 1

    def validate(self) -> None:
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if self.ensemble < 1:
            raise ValueError(f"ensemble must be >= 1, got {self.ensemble}")


@dataclass
class SegmentationResult:
    prob: np.ndarray  # float32 (H, W) in (0, 1)
    mask: np.ndarray  # uint8 (H, W) in {0, 1}
    trajectory: list[np.ndarray] | None = None


def segment(model: FlowUNet, image: np.ndarray, cfg: InferenceConfig) -> SegmentationResult:
    """Transport a seeded noise mask along the learned field and binarize.

    Deterministic per (weights, image, cfg). Ensemble > 1 averages probability
    maps over extra seeds derived from cfg.seed; the returned trajectory (when
    requested) is the first draw's N+1 states.
    """
    cfg.validate()
    device = next(model.parameters()).device
    img_t = torch.as_tensor(np.ascontiguousarray(image), dtype=torch.float32).to(device)
    h, w = img_t.shape
    schedule = EulerSchedule(cfg.num_steps)

    def field_fn(x, t):
        return forward_mtflow(model, img_t, x, t)

    seeds = [cfg.seed] + [
        derive_seed(cfg.seed, "ensemble", k) for k in range(1, cfg.ensemble)
    ]
    prob_sum = torch.zeros(h, w, device=device)
    first_trajectory = None
    with torch.no_grad():
        for k, seed in enumerate(seeds):
            x0 = sample_noise(h, w, seed).to(device)
            trajectory = euler_integrate(field_fn, x0, schedule)
            prob_sum += torch.sigmoid(trajectory[-1])
            if k == 0 and cfg.emit_trajectory:
                first_trajectory = [s.cpu().numpy().copy() for s in trajectory]
    prob = (prob_sum / len(seeds)).cpu().numpy().astype(np.float32)
    return SegmentationResult(
        prob=prob, mask=threshold(prob, cfg.tau), trajectory=first_trajectory
    )


def segment_baseline(model: FlowUNet, image: np.ndarray, tau: float = 0.5) -> SegmentationResult:
    """Single-pass segmentation with the baseline network."""
    device = next(model.parameters()).device
    img_t = torch.as_tensor(np.ascontiguousarray(image), dtype=torch.float32).to(device)
    with torch.no_grad():
        prob = forward_baseline(model, img_t).cpu().numpy().astype(np.float32)
    return SegmentationResult(prob=prob, mask=threshold(prob, tau))


@dataclass
class BatchItem:
    index: int
    result: SegmentationResult | None
    error: str | None


def segment_batch(
    model: FlowUNet,
    images: list[np.ndarray],
    cfg: InferenceConfig,
    base_seed: int,
    workers: int = 1,
) -> list[BatchItem]:
    """Segment a list of images with per-image seed = base_seed + index.

    Per-image failures are recorded with their index and do not stop the rest
    of the batch; results keep input order. Images are independent, so the
    batch may fan out across `workers` threads (weights are read-only).
    """

    def one(i: int) -> BatchItem:
        per_cfg = InferenceConfig(
            num_steps=cfg.num_steps,
            seed=base_seed + i,
            tau=cfg.tau,
            emit_trajectory=cfg.emit_trajectory,
            ensemble=cfg.ensemble,
        )
        try:
            return BatchItem(index=i, result=segment(model, images[i], per_cfg), error=None)
        except (RuntimeError, ValueError) as exc:
            return BatchItem(index=i, result=None, error=str(exc))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(len(images))))
    return [one(i) for i in range(len(images))]


def write_result(result: SegmentationResult, out_dir: str, name: str) -> list[str]:
    """Write probability map, mask, and optional trajectory frames as PNGs.

    Probability maps are 16-bit grayscale; trajectory states pass through the
    sigmoid so each frame is renderable in [0, 1]. Returns written paths.
    """
    probs_dir = os.path.join(out_dir, "probmaps")
    masks_dir = os.path.join(out_dir, "masks")
    os.makedirs(probs_dir, exist_ok=True)
    os.makedirs(masks_dir, exist_ok=True)
    written = []
    prob_path = os.path.join(probs_dir, name + ".png")
    mask_path = os.path.join(masks_dir, name + ".png")
    pngio.write_image_png(prob_path, result.prob)
    pngio.write_mask_png(mask_path, result.mask)
    written += [prob_path, mask_path]
    if result.trajectory is not None:
        traj_dir = os.path.join(out_dir, "trajectories")
        os.makedirs(traj_dir, exist_ok=True)
        for n, state in enumerate(result.trajectory):
            frame = 1.0 / (1.0 + np.exp(-np.clip(state, -60, 60)))
            path = os.path.join(traj_dir, f"{name}_step{n:03d}.png")
            pngio.write_image_png(path, frame)
            written.append(path)
    return written
