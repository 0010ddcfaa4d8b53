"""Flow-matching math: interpolation path, target field, Euler integration,
single-step mask reconstruction, and the class-weighted training loss.

Everything here operates on torch tensors and is pure given explicit seeds;
differentiability is preserved end to end for the training chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .core import derive_seed

PROB_EPS = 1e-7  # probability clamp before logarithms


@dataclass(frozen=True)
class EulerSchedule:
    """Uniform time grid t_n = n/N with step 1/N covering [0, 1]."""

    num_steps: int

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {self.num_steps}")

    @property
    def dt(self) -> float:
        return 1.0 / self.num_steps

    @property
    def times(self) -> list[float]:
        return [n / self.num_steps for n in range(self.num_steps)]


@dataclass(frozen=True)
class LossWeights:
    """Foreground/background weights countering the class imbalance."""

    w1: float = 1.0
    w0: float = 0.25

    def __post_init__(self):
        for label, w in (("w1", self.w1), ("w0", self.w0)):
            if not (w > 0 and w == w and abs(w) != float("inf")):
                raise ValueError(f"{label} must be positive and finite, got {w}")


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def interpolate(x0: torch.Tensor, x1: torch.Tensor, t: float) -> torch.Tensor:
    """Linear path point x_t = (1-t) * x0 + t * x1."""
    _check_shapes(x0, x1)
    return (1.0 - t) * x0 + t * x1.to(x0.dtype)


def target_field(x0: torch.Tensor, x1: torch.Tensor) -> torch.Tensor:
    """Displacement x1 - x0 that transports the path point to the mask; t-free."""
    _check_shapes(x0, x1)
    return x1.to(x0.dtype) - x0


def sample_noise(
    height: int, width: int, seed: int, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """I.i.d. standard-normal initial state, bit-deterministic per seed."""
    gen = torch.Generator().manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
    return torch.randn(height, width, generator=gen, dtype=dtype)


def euler_integrate(field_fn, x0: torch.Tensor, schedule: EulerSchedule) -> list[torch.Tensor]:
    """Roll x along the learned field: x_{n+1} = x_n + dt * field_fn(x_n, t_n).

    Returns the full trajectory of N+1 states, trajectory[0] being x0.
    """
    trajectory = [x0]
    x = x0
    dt = schedule.dt
    for n, t_n in enumerate(schedule.times):
        v = field_fn(x, t_n)
        if not torch.isfinite(v).all():
            raise RuntimeError(f"non-finite vector field at integration step {n}")
        x = x + dt * v
        trajectory.append(x)
    return trajectory


def reconstruct_train(x_t: torch.Tensor, t: float, v: torch.Tensor) -> torch.Tensor:
    """Single-step training reconstruction sigmoid(x_t + (1-t) * v).

    Extrapolates the remaining path in one step; with the exact target field
    the pre-sigmoid value is the ground-truth mask for any t.
    """
    _check_shapes(x_t, v)
    if not t < 1.0:
        raise ValueError(f"reconstruction requires t < 1, got {t}")
    return torch.sigmoid(x_t + (1.0 - t) * v)


def wbce_loss(y: torch.Tensor, yhat: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """Class-weighted binary cross-entropy, averaged over all pixels.

    Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before the logs.
    """
    _check_shapes(y, yhat)
    yf = y.to(yhat.dtype)
    p = yhat.clamp(PROB_EPS, 1.0 - PROB_EPS)
    terms = weights.w1 * yf * torch.log(p) + weights.w0 * (1.0 - yf) * torch.log(1.0 - p)
    return -terms.mean()


def aux_cfm_loss(v: torch.Tensor, x0: torch.Tensor, x1: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the predicted field and the target displacement."""
    _check_shapes(v, x0)
    _check_shapes(v, x1.to(v.dtype))
    return ((v - (x1.to(v.dtype) - x0)) ** 2).mean()


def draw_training_inputs(
    height: int, width: int, seed: int, dtype: torch.dtype = torch.float32
) -> tuple[float, torch.Tensor]:
    """Per-step (t, x0) draw: t ~ Uniform[0, 1), x0 ~ N(0, 1), both seed-pinned.

    t = 1 is excluded because the single-step extrapolation degenerates there.
    """
    gen = torch.Generator().manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
    t = float(torch.rand((), generator=gen, dtype=torch.float64))
    x0 = torch.randn(height, width, generator=gen, dtype=dtype)
    return t, x0


def rollout_reconstruct(model, image: torch.Tensor, x_t: torch.Tensor, t: float, steps: int):
    """Differentiable Euler completion of the remaining [t, 1] path in `steps`
    sub-steps; with steps=1 this is exactly the single-step reconstruction."""
    from .model import forward_mtflow

    if steps < 1:
        raise ValueError(f"rollout steps must be >= 1, got {steps}")
    dt = (1.0 - t) / steps
    x = x_t
    for j in range(steps):
        x = x + dt * forward_mtflow(model, image, x, t + j * dt)
    return torch.sigmoid(x)


def flow_training_loss(
    model,
    image: torch.Tensor,
    mask: torch.Tensor,
    t: float,
    x0: torch.Tensor,
    weights: LossWeights,
    aux_weight: float = 0.0,
    rollout_steps: int = 1,
) -> torch.Tensor:
    """Differentiable loss for one sample at a fixed (t, x0) draw."""
    from .model import forward_mtflow

    x0 = x0.to(image.device)
    x1 = mask.to(device=image.device, dtype=x0.dtype)
    x_t = interpolate(x0, x1, t)
    if rollout_steps > 1:
        yhat = rollout_reconstruct(model, image, x_t, t, rollout_steps)
        loss = wbce_loss(x1, yhat, weights)
        if aux_weight > 0.0:
            loss = loss + aux_weight * aux_cfm_loss(
                forward_mtflow(model, image, x_t, t), x0, x1
            )
        return loss
    v = forward_mtflow(model, image, x_t, t)
    yhat = reconstruct_train(x_t, t, v)
    loss = wbce_loss(x1, yhat, weights)
    if aux_weight > 0.0:
        loss = loss + aux_weight * aux_cfm_loss(v, x0, x1)
    return loss


def baseline_training_loss(
    model, image: torch.Tensor, mask: torch.Tensor, weights: LossWeights
) -> torch.Tensor:
    """Single-pass loss for the baseline: WBCE over its probability map."""
    from .model import forward_baseline

    yhat = forward_baseline(model, image)
    return wbce_loss(mask.to(yhat.dtype), yhat, weights)


def training_step(
    model,
    image: torch.Tensor,
    mask: torch.Tensor,
    seed: int,
    weights: LossWeights,
    aux_weight: float = 0.0,
    rollout_steps: int = 1,
) -> tuple[float, dict[str, torch.Tensor]]:
    """One flow-matching sample step: draw (t, x0), forward, and backpropagate.

    Returns the scalar loss and gradients keyed by parameter name; the model's
    own .grad fields are left untouched.
    """
    h, w = mask.shape
    t, x0 = draw_training_inputs(h, w, seed, dtype=image.dtype)
    loss = flow_training_loss(model, image, mask, t, x0, weights, aux_weight, rollout_steps)
    if not torch.isfinite(loss):
        raise RuntimeError(f"non-finite training loss (t={t:.6f}, seed={seed})")
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params)
    return float(loss.detach()), {n: g.detach() for n, g in zip(names, grads)}


def baseline_training_step(
    model, image: torch.Tensor, mask: torch.Tensor, weights: LossWeights
) -> tuple[float, dict[str, torch.Tensor]]:
    """Gradient step for the baseline; deterministic (no sampling involved)."""
    loss = baseline_training_loss(model, image, mask, weights)
    if not torch.isfinite(loss):
        raise RuntimeError("non-finite baseline training loss")
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params)
    return float(loss.detach()), {n: g.detach() for n, g in zip(names, grads)}


def validation_draw(name: str, height: int, width: int, dtype=torch.float32):
    """Frozen per-sample (t, x0) keyed by sample name, so validation losses are
    comparable across epochs instead of being dominated by sampling noise."""
    return draw_training_inputs(height, width, derive_seed("val-draw", name), dtype=dtype)
