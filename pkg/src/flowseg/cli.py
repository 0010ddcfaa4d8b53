"""Command-line entry point wiring generation, training, inference, and
evaluation, driven by an INI config file with flag overrides.

Precedence: explicit CLI flag > config file value > built-in default. Every
run writes the fully resolved effective config (config_used.ini) next to its
outputs; re-running with --config pointing at that file reproduces the run.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

import numpy as np
import torch

from . import data as data_mod
from . import datagen, evaluation, infer, pngio, train as train_mod
from .core import normalize_image, threshold
from .flow import LossWeights
from .model import ModelConfig


def _device() -> str:
    """Default compute device, overridable via FLOWSEG_DEVICE."""
    requested = os.environ.get("FLOWSEG_DEVICE", "cpu")
    if requested != "cpu" and not torch.cuda.is_available():
        print(f"warning: FLOWSEG_DEVICE={requested} unavailable, using cpu", file=sys.stderr)
        return "cpu"
    return requested


class RunConfig:
    """Layered option resolution that records every effective value."""

    def __init__(self, config_path: str | None):
        self._cp = configparser.ConfigParser()
        if config_path:
            if not os.path.isfile(config_path):
                raise FileNotFoundError(f"config file not found: {config_path}")
            self._cp.read(config_path)
        self.effective: dict[str, dict[str, str]] = {}

    def resolve(self, section: str, key: str, flag_value, default, cast=str):
        if flag_value is not None:
            value = flag_value
        elif self._cp.has_option(section, key):
            raw = self._cp.get(section, key)
            if cast is bool:
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                value = cast(raw)
        else:
            value = default
        if value is not None:
            self.effective.setdefault(section, {})[key] = str(value)
        return value

    def require(self, section: str, key: str, flag_value, flag_name: str, cast=str):
        value = self.resolve(section, key, flag_value, None, cast)
        if value is None:
            raise ValueError(f"missing required option {flag_name} (or [{section}] {key})")
        return value

    def write(self, path: str) -> None:
        out = configparser.ConfigParser()
        for section in sorted(self.effective):
            out[section] = dict(sorted(self.effective[section].items()))
        with open(path, "w", encoding="utf-8") as fh:
            out.write(fh)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def _resolve_specs(rc: RunConfig, args) -> tuple[datagen.FilamentSpec, datagen.NoiseSpec]:
    variant = rc.resolve("filaments", "variant", args.variant, "simple")
    if variant not in ("simple", "complex"):
        raise ValueError(f"variant must be 'simple' or 'complex', got {variant!r}")
    decay_mode = "linear" if variant == "complex" else "none"
    decay_default = 0.8 if variant == "complex" else 0.0
    fspec = datagen.FilamentSpec(
        num_filaments=(
            rc.resolve("filaments", "min_filaments", args.min_filaments, 2, int),
            rc.resolve("filaments", "max_filaments", args.max_filaments, 4, int),
        ),
        length_px=(
            rc.resolve("filaments", "min_length", args.min_length, 24.0, float),
            rc.resolve("filaments", "max_length", args.max_length, 56.0, float),
        ),
        curvature_sigma=rc.resolve("filaments", "curvature_sigma", args.curvature, 0.15, float),
        width_px=rc.resolve("filaments", "width_px", args.width_px, 2.5, float),
        intensity=rc.resolve("filaments", "intensity", args.intensity, 1.0, float),
        decay_mode=rc.resolve("filaments", "decay_mode", None, decay_mode),
        decay_fraction=rc.resolve(
            "filaments", "decay_fraction", args.decay_fraction, decay_default, float
        ),
    )
    nspec = datagen.NoiseSpec(
        psf_sigma_px=rc.resolve("noise", "psf_sigma_px", args.psf_sigma, 1.0, float),
        background_level=rc.resolve("noise", "background_level", args.background, 0.08, float),
        photon_scale=rc.resolve("noise", "photon_scale", args.photon_scale, 200.0, float),
        read_noise_sigma=rc.resolve("noise", "read_noise_sigma", args.read_noise, 0.01, float),
    )
    return fspec, nspec


def cmd_generate(args) -> int:
    rc = RunConfig(args.config)
    out_dir = rc.require("paths", "out_dir", args.out, "--out")
    size = rc.resolve("generate", "size", args.size, 64, int)
    height = rc.resolve("generate", "height", args.height, size, int)
    width = rc.resolve("generate", "width", args.width, size, int)
    count = rc.resolve("generate", "count", args.count, 80, int)
    seed = rc.resolve("generate", "seed", args.seed, 0, int)
    workers = rc.resolve("generate", "workers", args.workers, 1, int)
    fspec, nspec = _resolve_specs(rc, args)

    datagen.generate_dataset(fspec, nspec, height, width, count, seed, out_dir, workers=workers)
    rc.write(os.path.join(out_dir, "config_used.ini"))
    print(os.path.join(out_dir, "manifest"))
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _resolve_model_config(rc: RunConfig, args, in_channels: int) -> ModelConfig:
    return ModelConfig(
        base_filters=rc.resolve("model", "base_filters", args.base_filters, 64, int),
        depth=rc.resolve("model", "depth", args.depth, 4, int),
        groupnorm_groups=rc.resolve("model", "groupnorm_groups", args.groups, 8, int),
        time_embed_dim=rc.resolve("model", "time_embed_dim", args.time_embed_dim, 128, int),
        mlp_hidden_dim=rc.resolve("model", "mlp_hidden_dim", args.mlp_hidden_dim, 256, int),
        in_channels=in_channels,
        out_channels=1,
    )


def _resolve_train_config(rc: RunConfig, args) -> train_mod.TrainConfig:
    return train_mod.TrainConfig(
        batch_size=rc.resolve("train", "batch_size", args.batch_size, 2, int),
        lr0=rc.resolve("train", "lr0", args.lr, 1e-4, float),
        weight_decay=rc.resolve("train", "weight_decay", args.weight_decay, 1e-5, float),
        t_max=rc.resolve("train", "t_max", args.t_max, 100, int),
        eta_min=rc.resolve("train", "eta_min", args.eta_min, 0.0, float),
        patience=rc.resolve("train", "patience", args.patience, 30, int),
        max_epochs=rc.resolve("train", "max_epochs", args.max_epochs, 300, int),
        seed=rc.resolve("train", "seed", args.seed, 0, int),
        loss_weights=LossWeights(
            w1=rc.resolve("loss", "w1", args.w1, 1.0, float),
            w0=rc.resolve("loss", "w0", args.w0, 0.25, float),
        ),
        aux_cfm_weight=rc.resolve("train", "aux_cfm_weight", args.aux_cfm_weight, 0.0, float),
        rollout_steps=rc.resolve("train", "rollout_steps", args.rollout_steps, 1, int),
    )


def _resolve_split(rc: RunConfig, args) -> data_mod.SplitSpec:
    return data_mod.SplitSpec(
        train_fraction=rc.resolve("split", "train_fraction", args.train_frac, 0.8, float),
        val_fraction=rc.resolve("split", "val_fraction", args.val_frac, 0.1, float),
        test_fraction=rc.resolve("split", "test_fraction", args.test_frac, 0.1, float),
        shuffle_seed=rc.resolve("split", "shuffle_seed", args.split_seed, 0, int),
    )


def cmd_train(args) -> int:
    rc = RunConfig(args.config)
    data_root = rc.require("paths", "data_root", args.data_root, "--data-root")
    out_dir = rc.require("paths", "out_dir", args.out, "--out")
    model_name = rc.resolve("model", "arch", args.model, "mtflow")
    if model_name not in ("mtflow", "unet"):
        raise ValueError(f"--model must be 'mtflow' or 'unet', got {model_name!r}")
    arch = "mtflow" if model_name == "mtflow" else "baseline"
    model_cfg = _resolve_model_config(rc, args, in_channels=2 if arch == "mtflow" else 1)
    train_cfg = _resolve_train_config(rc, args)
    split_spec = _resolve_split(rc, args)

    pairs = data_mod.load_dataset(data_root)
    train_pairs, val_pairs, _ = data_mod.split(pairs, split_spec)
    os.makedirs(out_dir, exist_ok=True)
    rc.write(os.path.join(out_dir, "config_used.ini"))
    result = train_mod.train(
        model_cfg,
        train_cfg,
        train_pairs,
        val_pairs,
        out_dir,
        arch=arch,
        resume_from=args.resume,
        log_fn=print,
        device=_device(),
    )
    print(f"best checkpoint: {result.best_path} (val_loss={result.best_val:.6f})")
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def _load_images_dir(images_dir: str) -> tuple[list[str], list[np.ndarray]]:
    if not os.path.isdir(images_dir):
        raise FileNotFoundError(f"missing images directory: {images_dir}")
    names = sorted(
        os.path.splitext(f)[0] for f in os.listdir(images_dir) if f.endswith(".png")
    )
    if not names:
        raise ValueError(f"no .png images found in {images_dir}")
    images = [
        normalize_image(pngio.read_gray_png(os.path.join(images_dir, n + ".png"))) for n in names
    ]
    return names, images


def _check_checkpoint_match(rc: RunConfig, args, ckpt: train_mod.Checkpoint) -> None:
    """Explicitly requested architecture values must agree with the checkpoint."""
    stored = ckpt.meta["model_config"]
    for flag, key in (
        (args.base_filters, "base_filters"),
        (args.depth, "depth"),
        (getattr(args, "groups", None), "groupnorm_groups"),
    ):
        requested = rc.resolve("model", key, flag, None, int)
        if requested is not None and requested != stored[key]:
            raise ValueError(
                f"checkpoint/model mismatch: {key}={requested} requested but "
                f"checkpoint was trained with {key}={stored[key]}"
            )


def cmd_infer(args) -> int:
    rc = RunConfig(args.config)
    ckpt_path = rc.require("paths", "checkpoint", args.checkpoint, "--checkpoint")
    out_dir = rc.require("paths", "out_dir", args.out, "--out")
    images_dir = args.images
    if images_dir is None:
        data_root = rc.require("paths", "data_root", args.data_root, "--data-root/--images")
        images_dir = os.path.join(data_root, "images")

    ckpt = train_mod.load_checkpoint(ckpt_path)
    _check_checkpoint_match(rc, args, ckpt)
    model = ckpt.build().to(_device())
    names, images = _load_images_dir(images_dir)
    icfg = infer.InferenceConfig(
        num_steps=rc.resolve("inference", "num_steps", args.steps, 10, int),
        seed=rc.resolve("inference", "seed", args.seed, 0, int),
        tau=rc.resolve("inference", "threshold", args.threshold, 0.5, float),
        emit_trajectory=rc.resolve(
            "inference", "emit_trajectory", args.emit_trajectory, False, bool
        ),
        ensemble=rc.resolve("inference", "ensemble", args.ensemble, 1, int),
    )
    os.makedirs(out_dir, exist_ok=True)
    rc.write(os.path.join(out_dir, "config_used.ini"))

    workers = rc.resolve("inference", "workers", args.workers, 1, int)
    failures = []
    if ckpt.arch == "baseline":
        for name, image in zip(names, images):
            result = infer.segment_baseline(model, image, tau=icfg.tau)
            infer.write_result(result, out_dir, name)
    else:
        items = infer.segment_batch(model, images, icfg, base_seed=icfg.seed, workers=workers)
        for item in items:
            if item.error is not None:
                failures.append((names[item.index], item.error))
                continue
            infer.write_result(item.result, out_dir, names[item.index])
    for name, error in failures:
        print(f"error: {name}: {error}", file=sys.stderr)
    print(f"wrote {len(names) - len(failures)} of {len(names)} segmentations to {out_dir}")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _probs_from_pred_root(pred_root: str, names: list[str]) -> list[np.ndarray]:
    """Load predictions: 16-bit probmaps/ preferred, masks/ accepted as binary."""
    probs = []
    for name in names:
        prob_path = os.path.join(pred_root, "probmaps", name + ".png")
        mask_path = os.path.join(pred_root, "masks", name + ".png")
        if os.path.isfile(prob_path):
            probs.append(pngio.read_gray_png(prob_path).astype(np.float32) / 65535.0)
        elif os.path.isfile(mask_path):
            probs.append((pngio.read_gray_png(mask_path) > 0).astype(np.float32))
        else:
            raise FileNotFoundError(f"no prediction for {name!r} under {pred_root}")
    return probs


def _probs_from_checkpoint(
    ckpt_path: str, images: list[np.ndarray], icfg: infer.InferenceConfig
) -> tuple[str, list[np.ndarray]]:
    ckpt = train_mod.load_checkpoint(ckpt_path)
    model = ckpt.build().to(_device())
    if ckpt.arch == "baseline":
        return "unet", [infer.segment_baseline(model, im, tau=icfg.tau).prob for im in images]
    items = infer.segment_batch(model, images, icfg, base_seed=icfg.seed)
    errors = [f"image {it.index}: {it.error}" for it in items if it.error]
    if errors:
        raise RuntimeError("inference failed for " + "; ".join(errors))
    return "mtflow", [it.result.prob for it in items]


def cmd_evaluate(args) -> int:
    rc = RunConfig(args.config)
    data_root = rc.require("paths", "data_root", args.data_root, "--data-root")
    out_dir = rc.require("paths", "out_dir", args.out, "--out")
    pred_root = rc.resolve("paths", "pred_root", args.pred_root, None)
    checkpoints = args.checkpoint or []
    if not checkpoints and pred_root is None:
        raise ValueError("provide --checkpoint (repeatable) or --pred-root")

    pairs = data_mod.load_dataset(data_root)
    if not pairs:
        raise ValueError(f"empty test set under {data_root}")
    names = [p.name for p in pairs]
    images = [p.image for p in pairs]
    masks_true = [p.mask for p in pairs]
    tau = rc.resolve("inference", "threshold", args.threshold, 0.5, float)
    weights = LossWeights(
        w1=rc.resolve("loss", "w1", args.w1, 1.0, float),
        w0=rc.resolve("loss", "w0", args.w0, 0.25, float),
    )
    icfg = infer.InferenceConfig(
        num_steps=rc.resolve("inference", "num_steps", args.steps, 10, int),
        seed=rc.resolve("inference", "seed", args.seed, 0, int),
        tau=tau,
    )
    pooled = rc.resolve("evaluate", "pooled", args.pooled, False, bool)
    os.makedirs(out_dir, exist_ok=True)
    rc.write(os.path.join(out_dir, "config_used.ini"))

    sources: list[tuple[str, list[np.ndarray]]] = []
    if pred_root is not None:
        sources.append(("predictions", _probs_from_pred_root(pred_root, names)))
    for ckpt_path in checkpoints:
        arch, probs = _probs_from_checkpoint(ckpt_path, images, icfg)
        label = f"{arch}:{os.path.splitext(os.path.basename(ckpt_path))[0]}"
        if len(checkpoints) == 1 and pred_root is None:
            label = arch
        sources.append((label, probs))

    summary_rows = []
    for label, probs in sources:
        report = evaluation.evaluate_predictions(
            names, masks_true, probs, tau=tau, weights=weights, pooled=pooled
        )
        sub_dir = out_dir if len(sources) == 1 else os.path.join(out_dir, label.replace(":", "_"))
        evaluation.write_report(report, sub_dir)
        evaluation.write_overlays(names, masks_true, [threshold(p, tau) for p in probs], sub_dir)
        summary_rows.append((label, report.mean))
        if report.pooled is not None:
            summary_rows.append((label + " (pooled)", report.pooled))

    print(evaluation.format_table(summary_rows))
    return 0


# ---------------------------------------------------------------------------
# repro: the full desk-scale pipeline
# ---------------------------------------------------------------------------


def cmd_repro(args) -> int:
    rc = RunConfig(args.config)
    out_dir = rc.require("paths", "out_dir", args.out, "--out")
    seed = rc.resolve("repro", "seed", args.seed, 0, int)
    count = rc.resolve("repro", "count", args.count, 80, int)
    size = rc.resolve("repro", "size", args.size, 64, int)
    max_epochs = rc.resolve("repro", "max_epochs", args.max_epochs, 30, int)
    base_filters = rc.resolve("repro", "base_filters", args.base_filters, 16, int)
    steps = rc.resolve("repro", "steps", args.steps, 10, int)
    # Paper optimizer settings rescaled to the small run: full cosine cycle
    # within the epoch budget and a higher lr for the ~1000-update regime.
    lr = rc.resolve("repro", "lr0", args.lr, 1e-3, float)
    # Two-step rollout training keeps the field calibrated on the states the
    # multi-step Euler inference actually visits.
    rollout = rc.resolve("repro", "rollout_steps", args.rollout_steps, 2, int)
    os.makedirs(out_dir, exist_ok=True)

    data_dir = os.path.join(out_dir, "data")
    print(f"[repro] generating {count} synthetic {size}x{size} images (simple variant)")
    datagen.generate_dataset(
        datagen.simple_spec(), datagen.NoiseSpec(), size, size, count, seed, data_dir
    )
    pairs = data_mod.load_dataset(data_dir)
    split_spec = data_mod.SplitSpec(shuffle_seed=seed)
    train_pairs, val_pairs, test_pairs = data_mod.split(pairs, split_spec)
    print(
        f"[repro] split: {len(train_pairs)} train / {len(val_pairs)} val / {len(test_pairs)} test"
    )

    train_cfg = train_mod.TrainConfig(
        batch_size=2,
        lr0=lr,
        weight_decay=1e-5,
        t_max=max_epochs,
        patience=min(30, max_epochs),
        max_epochs=max_epochs,
        seed=seed,
        rollout_steps=rollout,
    )
    device = _device()
    results = {}
    for model_name, arch in (("mtflow", "mtflow"), ("unet", "baseline")):
        model_cfg = ModelConfig(
            base_filters=base_filters, in_channels=2 if arch == "mtflow" else 1
        )
        print(f"[repro] training {model_name} (base_filters={base_filters}, "
              f"max_epochs={max_epochs})")
        results[model_name] = train_mod.train(
            model_cfg,
            train_cfg,
            train_pairs,
            val_pairs,
            os.path.join(out_dir, model_name),
            arch=arch,
            log_fn=print,
            device=device,
        )

    names = [p.name for p in test_pairs]
    images = [p.image for p in test_pairs]
    masks_true = [p.mask for p in test_pairs]
    icfg = infer.InferenceConfig(num_steps=steps, seed=seed)
    table_rows = []
    summary = {}
    for model_name in ("mtflow", "unet"):
        ckpt = train_mod.load_checkpoint(results[model_name].best_path)
        model = ckpt.build().to(device)
        if model_name == "mtflow":
            probs = [infer.segment(model, im, icfg).prob for im in images]
        else:
            probs = [infer.segment_baseline(model, im).prob for im in images]
        report = evaluation.evaluate_predictions(names, masks_true, probs)
        eval_dir = os.path.join(out_dir, f"eval_{model_name}")
        evaluation.write_report(report, eval_dir)
        evaluation.write_overlays(names, masks_true, [threshold(p, 0.5) for p in probs], eval_dir)
        table_rows.append((model_name, report.mean))
        summary[model_name] = {
            "loss": report.mean.loss,
            "dice": report.mean.dice,
            "sensitivity": report.mean.sensitivity,
            "precision": report.mean.precision,
            "mcc": report.mean.mcc,
            "pr_auc": report.mean.pr_auc,
            "best_val_loss": results[model_name].best_val,
            "best_checkpoint": results[model_name].best_path,
        }

    # Degenerate reference: predict everything as foreground.
    allfg_report = evaluation.evaluate_predictions(
        names, masks_true, [np.full(m.shape, 0.99, np.float32) for m in masks_true]
    )
    table_rows.append(("all-foreground", allfg_report.mean))
    summary["all_foreground_dice"] = allfg_report.mean.dice

    rc.write(os.path.join(out_dir, "config_used.ini"))
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    print()
    print(evaluation.format_table(table_rows))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowseg",
        description="Flow-matching segmentation of thin curvilinear structures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="INI config file; flags override its values")

    g = sub.add_parser("generate", help="write a synthetic filament dataset")
    add_common(g)
    g.add_argument("--out", help="dataset output directory")
    g.add_argument("--count", type=int, help="number of image/mask pairs (default 80)")
    g.add_argument("--size", type=int, help="square image size (default 64)")
    g.add_argument("--height", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--variant", choices=("simple", "complex"),
                   help="simple: uniform brightness; complex: fades along filaments")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, help="parallel sample builders (default 1)")
    g.add_argument("--min-filaments", type=int)
    g.add_argument("--max-filaments", type=int)
    g.add_argument("--min-length", type=float)
    g.add_argument("--max-length", type=float)
    g.add_argument("--curvature", type=float, help="heading noise per step, radians")
    g.add_argument("--width-px", type=float)
    g.add_argument("--intensity", type=float)
    g.add_argument("--decay-fraction", type=float)
    g.add_argument("--psf-sigma", type=float)
    g.add_argument("--background", type=float)
    g.add_argument("--photon-scale", type=float)
    g.add_argument("--read-noise", type=float)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the flow model or the plain baseline")
    add_common(t)
    t.add_argument("--data-root", help="dataset root (images/ + masks/)")
    t.add_argument("--out", help="run output directory")
    t.add_argument("--model", choices=("mtflow", "unet"))
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--t-max", type=int)
    t.add_argument("--eta-min", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--w1", type=float, help="foreground loss weight")
    t.add_argument("--w0", type=float, help="background loss weight")
    t.add_argument("--aux-cfm-weight", type=float)
    t.add_argument("--rollout-steps", type=int,
                   help="train on a K-step differentiable rollout instead of one step")
    t.add_argument("--base-filters", type=int)
    t.add_argument("--depth", type=int)
    t.add_argument("--groups", type=int)
    t.add_argument("--time-embed-dim", type=int)
    t.add_argument("--mlp-hidden-dim", type=int)
    t.add_argument("--train-frac", type=float)
    t.add_argument("--val-frac", type=float)
    t.add_argument("--test-frac", type=float)
    t.add_argument("--split-seed", type=int)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="segment images with a trained checkpoint")
    add_common(i)
    i.add_argument("--checkpoint")
    i.add_argument("--data-root", help="dataset root; images are read from <root>/images")
    i.add_argument("--images", help="directly a directory of .png images")
    i.add_argument("--out")
    i.add_argument("--steps", type=int, help="Euler integration steps (default 10)")
    i.add_argument("--seed", type=int)
    i.add_argument("--threshold", type=float)
    i.add_argument("--emit-trajectory", action="store_const", const=True, default=None)
    i.add_argument("--ensemble", type=int, help="average probability maps over K seeds")
    i.add_argument("--workers", type=int, help="parallel image workers (default 1)")
    i.add_argument("--base-filters", type=int, help="must match the checkpoint if given")
    i.add_argument("--depth", type=int, help="must match the checkpoint if given")
    i.add_argument("--groups", type=int, help="must match the checkpoint if given")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("evaluate", help="score predictions or checkpoints against masks")
    add_common(e)
    e.add_argument("--data-root", help="dataset root with ground-truth masks")
    e.add_argument("--out")
    e.add_argument("--checkpoint", action="append",
                   help="checkpoint to evaluate (repeat for a comparative table)")
    e.add_argument("--model", action="append", dest="checkpoint",
                   help="alias for --checkpoint")
    e.add_argument("--pred-root", help="directory of written predictions (probmaps/ or masks/)")
    e.add_argument("--steps", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--threshold", type=float)
    e.add_argument("--w1", type=float)
    e.add_argument("--w0", type=float)
    e.add_argument("--pooled", action="store_const", const=True, default=None,
                   help="also report dataset-pooled (all pixels merged) metrics")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("repro", help="desk-scale end-to-end run: generate, train both "
                                     "models, evaluate, print the comparative table")
    add_common(r)
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--count", type=int)
    r.add_argument("--size", type=int)
    r.add_argument("--max-epochs", type=int)
    r.add_argument("--base-filters", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--lr", type=float)
    r.add_argument("--rollout-steps", type=int)
    r.set_defaults(func=cmd_repro)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
