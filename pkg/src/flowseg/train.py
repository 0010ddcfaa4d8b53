"""Optimization loop: batching, AdamW, cosine annealing, early stopping,
validation with frozen draws, and single-file binary checkpoints.

All randomness (epoch shuffles, augmentation, per-sample flow draws) is
derived from (seed, epoch, index) via derive_seed, so runs are reproducible
and checkpoint resume is bit-exact in deterministic (CPU) mode.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from . import data as data_mod
from . import flow
from .core import derive_seed
from .model import FlowUNet, ModelConfig, build_model

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CKPT_MAGIC = b"FSEGCKPT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    lr0: float = 1e-4
    weight_decay: float = 1e-5
    t_max: int = 100
    eta_min: float = 0.0
    patience: int = 30
    max_epochs: int = 300
    seed: int = 0
    loss_weights: flow.LossWeights = field(default_factory=flow.LossWeights)
    aux_cfm_weight: float = 0.0
    rollout_steps: int = 1  # >1 trains on a differentiable multi-step rollout

    def validate(self) -> None:
        if self.batch_size < 1 or self.t_max < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, t_max, max_epochs, and patience must be >= 1")
        if self.lr0 <= 0 or self.weight_decay < 0 or self.eta_min < 0 or self.aux_cfm_weight < 0:
            raise ValueError("lr0 must be > 0; weight_decay, eta_min, aux_cfm_weight >= 0")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.rollout_steps < 1:
            raise ValueError(f"rollout_steps must be >= 1, got {self.rollout_steps}")


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """Cosine annealing from lr0 to eta_min over t_max epochs, clamped after."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    progress = min(epoch, cfg.t_max) / cfg.t_max
    return cfg.eta_min + (cfg.lr0 - cfg.eta_min) * (1.0 + math.cos(math.pi * progress)) / 2.0


@dataclass
class AdamWState:
    step: int
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]


def init_adamw_state(params: dict[str, torch.Tensor]) -> AdamWState:
    return AdamWState(
        step=0,
        m={k: torch.zeros_like(p) for k, p in params.items()},
        v={k: torch.zeros_like(p) for k, p in params.items()},
    )


def adamw_update(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: AdamWState,
    lr: float,
    weight_decay: float,
) -> tuple[dict[str, torch.Tensor], AdamWState]:
    """One AdamW step with decoupled weight decay and bias correction.

    Decay is applied as theta <- theta - lr * wd * theta, separate from the
    adaptive moment step. Pure: returns fresh tensors and state.
    """
    if set(params) != set(grads):
        raise ValueError("parameter and gradient key sets differ")
    step = state.step + 1
    bc1 = 1.0 - ADAM_BETA1**step
    bc2 = 1.0 - ADAM_BETA2**step
    new_params: dict[str, torch.Tensor] = {}
    new_m: dict[str, torch.Tensor] = {}
    new_v: dict[str, torch.Tensor] = {}
    for name, theta in params.items():
        g = grads[name]
        if not torch.isfinite(g).all():
            raise RuntimeError(f"non-finite gradient for parameter {name!r}")
        m = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = theta - lr * weight_decay * theta - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamWState(step=step, m=new_m, v=new_v)


def average_gradients(grad_list: list[dict[str, torch.Tensor]]) -> dict[str, torch.Tensor]:
    """Mean of per-sample gradient dicts (the batch gradient)."""
    if not grad_list:
        raise ValueError("cannot average an empty gradient list")
    keys = grad_list[0].keys()
    return {k: sum(g[k] for g in grad_list) / len(grad_list) for k in keys}


# ---------------------------------------------------------------------------
# Checkpoint container: magic, version, JSON metadata block, then
# length-prefixed little-endian float32 tensor payloads keyed by name.
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    meta: dict
    tensors: dict[str, torch.Tensor]

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.meta["model_config"])

    @property
    def arch(self) -> str:
        return self.meta["arch"]

    def model_weights(self) -> dict[str, torch.Tensor]:
        return {k[len("model."):]: v for k, v in self.tensors.items() if k.startswith("model.")}

    def build(self) -> FlowUNet:
        """Reconstruct the network this checkpoint was saved from."""
        model = FlowUNet(self.model_config, time_conditioned=self.arch == "mtflow")
        model.load_state_dict(self.model_weights())
        return model


def save_checkpoint(path: str, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            tensor = tensors[name].detach().cpu().to(torch.float32).contiguous()
            name_b = name.encode("utf-8")
            payload = tensor.numpy().astype("<f4").tobytes()
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", tensor.ndim))
            for dim in tensor.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def load_checkpoint(path: str) -> Checkpoint:
    def read_exact(fh, n: int) -> bytes:
        buf = fh.read(n)
        if len(buf) != n:
            raise ValueError("corrupted checkpoint: truncated file")
        return buf

    with open(path, "rb") as fh:
        if read_exact(fh, len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValueError("corrupted checkpoint: bad magic header")
        (version,) = struct.unpack("<I", read_exact(fh, 4))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version} (expected {CKPT_VERSION})")
        (meta_len,) = struct.unpack("<Q", read_exact(fh, 8))
        meta = json.loads(read_exact(fh, meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", read_exact(fh, 4))
        tensors: dict[str, torch.Tensor] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", read_exact(fh, 2))
            name = read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", read_exact(fh, 1))
            shape = tuple(struct.unpack("<I", read_exact(fh, 4))[0] for _ in range(ndim))
            (payload_len,) = struct.unpack("<Q", read_exact(fh, 8))
            arr = np.frombuffer(read_exact(fh, payload_len), dtype="<f4").reshape(shape)
            tensors[name] = torch.from_numpy(arr.copy())
    return Checkpoint(meta=meta, tensors=tensors)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    best_path: str
    last_path: str
    history: list[EpochRecord]
    best_val: float
    best_epoch: int


def _sample_to_tensors(
    pair: data_mod.SamplePair, device: str = "cpu"
) -> tuple[torch.Tensor, torch.Tensor]:
    return (
        torch.from_numpy(np.ascontiguousarray(pair.image, dtype=np.float32)).to(device),
        torch.from_numpy(np.ascontiguousarray(pair.mask)).to(torch.float32).to(device),
    )


def validation_loss(
    model: FlowUNet, val_pairs: list[data_mod.SamplePair], cfg: TrainConfig, arch: str
) -> float:
    """Mean loss over the validation set, no augmentation, frozen (t, x0) draws."""
    device = next(model.parameters()).device
    losses = []
    with torch.no_grad():
        for pair in val_pairs:
            image, mask = _sample_to_tensors(pair, device)
            if arch == "mtflow":
                t, x0 = flow.validation_draw(pair.name, *mask.shape)
                loss = flow.flow_training_loss(
                    model, image, mask, t, x0, cfg.loss_weights, cfg.aux_cfm_weight,
                    cfg.rollout_steps,
                )
            else:
                loss = flow.baseline_training_loss(model, image, mask, cfg.loss_weights)
            losses.append(float(loss))
    return float(np.mean(losses))


def _checkpoint_tensors(model: FlowUNet, opt: AdamWState) -> dict[str, torch.Tensor]:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    tensors.update({f"adamw.m.{k}": v for k, v in opt.m.items()})
    tensors.update({f"adamw.v.{k}": v for k, v in opt.v.items()})
    return tensors


def _checkpoint_meta(
    model_cfg: ModelConfig, train_cfg: TrainConfig, arch: str, **state
) -> dict:
    train_dict = dataclasses.asdict(train_cfg)
    train_dict["loss_weights"] = dataclasses.asdict(train_cfg.loss_weights)
    return {
        "arch": arch,
        "model_config": dataclasses.asdict(model_cfg),
        "train_config": train_dict,
        **state,
    }


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_pairs: list[data_mod.SamplePair],
    val_pairs: list[data_mod.SamplePair],
    out_dir: str,
    arch: str = "mtflow",
    resume_from: str | None = None,
    log_fn=None,
    device: str = "cpu",
) -> TrainResult:
    """Run the full optimization loop; returns paths to best and last checkpoints.

    Per epoch: seeded shuffle, batches of batch_size (last partial batch kept),
    on-the-fly augmentation, per-sample gradient steps averaged across the
    batch, one AdamW update per batch at cosine_lr(epoch); then validation,
    best-checkpoint tracking, and early stopping after `patience` epochs
    without improvement.
    """
    if arch not in ("mtflow", "baseline"):
        raise ValueError(f"arch must be 'mtflow' or 'baseline', got {arch!r}")
    if not train_pairs or not val_pairs:
        raise ValueError("train and validation sets must be non-empty")
    model_cfg.validate()
    train_cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")
    log_path = os.path.join(out_dir, "train_log.txt")

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.meta["model_config"] != dataclasses.asdict(model_cfg) or ckpt.arch != arch:
            raise ValueError("checkpoint/model mismatch: config differs from the requested run")
        model = ckpt.build()
        opt = AdamWState(
            step=ckpt.meta["adamw_step"],
            m={k[len("adamw.m."):]: v for k, v in ckpt.tensors.items() if k.startswith("adamw.m.")},
            v={k[len("adamw.v."):]: v for k, v in ckpt.tensors.items() if k.startswith("adamw.v.")},
        )
        start_epoch = ckpt.meta["epoch_next"]
        best_val = ckpt.meta["best_val"]
        best_epoch = ckpt.meta["best_epoch"]
        epochs_since = ckpt.meta["epochs_since_improvement"]
        opt.m = {k: v.to(device) for k, v in opt.m.items()}
        opt.v = {k: v.to(device) for k, v in opt.v.items()}
    else:
        model = build_model(
            model_cfg, derive_seed(train_cfg.seed, "init", arch), time_conditioned=arch == "mtflow"
        )
        opt = init_adamw_state(dict(model.named_parameters()))
        start_epoch = 0
        best_val = math.inf
        best_epoch = -1
        epochs_since = 0
    model = model.to(device)

    history: list[EpochRecord] = []
    with open(log_path, "a", encoding="utf-8") as log_file:
        for epoch in range(start_epoch, train_cfg.max_epochs):
            lr = cosine_lr(epoch, train_cfg)
            order = np.random.default_rng(
                derive_seed(train_cfg.seed, "shuffle", epoch)
            ).permutation(len(train_pairs))
            epoch_losses = []
            for start in range(0, len(order), train_cfg.batch_size):
                batch = order[start : start + train_cfg.batch_size]
                grad_list = []
                for idx in batch:
                    idx = int(idx)
                    pair = train_pairs[idx]
                    aug_rng = np.random.default_rng(derive_seed(train_cfg.seed, "aug", epoch, idx))
                    pair = data_mod.augment(pair, aug_rng)
                    image, mask = _sample_to_tensors(pair, device)
                    try:
                        if arch == "mtflow":
                            loss, grads = flow.training_step(
                                model,
                                image,
                                mask,
                                derive_seed(train_cfg.seed, "draw", epoch, idx),
                                train_cfg.loss_weights,
                                train_cfg.aux_cfm_weight,
                                train_cfg.rollout_steps,
                            )
                        else:
                            loss, grads = flow.baseline_training_step(
                                model, image, mask, train_cfg.loss_weights
                            )
                    except RuntimeError:
                        # Keep the last good state reachable before aborting.
                        save_checkpoint(
                            last_path,
                            _checkpoint_tensors(model, opt),
                            _checkpoint_meta(
                                model_cfg, train_cfg, arch,
                                epoch_next=epoch, adamw_step=opt.step,
                                best_val=best_val, best_epoch=best_epoch,
                                epochs_since_improvement=epochs_since,
                            ),
                        )
                        raise
                    epoch_losses.append(loss)
                    grad_list.append(grads)
                new_params, opt = adamw_update(
                    dict(model.named_parameters()),
                    average_gradients(grad_list),
                    opt,
                    lr,
                    train_cfg.weight_decay,
                )
                with torch.no_grad():
                    for name, param in model.named_parameters():
                        param.copy_(new_params[name])

            train_loss = float(np.mean(epoch_losses))
            val_loss = validation_loss(model, val_pairs, train_cfg, arch)
            record = EpochRecord(epoch=epoch, lr=lr, train_loss=train_loss, val_loss=val_loss)
            history.append(record)
            line = (
                f"epoch={epoch} lr={lr:.8e} train_loss={train_loss:.8f} val_loss={val_loss:.8f}"
            )
            log_file.write(line + "\n")
            log_file.flush()
            if log_fn is not None:
                log_fn(line)

            if val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                epochs_since = 0
            else:
                epochs_since += 1
            meta = _checkpoint_meta(
                model_cfg, train_cfg, arch,
                epoch_next=epoch + 1, adamw_step=opt.step,
                best_val=best_val, best_epoch=best_epoch,
                epochs_since_improvement=epochs_since,
            )
            tensors = _checkpoint_tensors(model, opt)
            save_checkpoint(last_path, tensors, meta)
            if best_epoch == epoch:
                save_checkpoint(best_path, tensors, meta)
            if epochs_since >= train_cfg.patience:
                break

    return TrainResult(
        best_path=best_path,
        last_path=last_path,
        history=history,
        best_val=best_val,
        best_epoch=best_epoch,
    )
