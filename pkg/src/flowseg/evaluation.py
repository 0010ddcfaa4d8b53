"""Segmentation metrics (Dice, sensitivity, precision, MCC, PR-AUC),
composite error overlays, and per-run metric reports.

Aggregates are unweighted per-image means by default; a pooled mode that
merges all pixels before computing metrics is available for comparison since
either convention appears in the literature.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from . import pngio
from .core import threshold
from .flow import LossWeights, wbce_loss

COLUMNS = ("Loss", "Dice", "Sens", "Prec", "MCC", "PR-AUC")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(y: np.ndarray, yhat: np.ndarray) -> ConfusionCounts:
    """Pixelwise confusion counts with foreground = 1."""
    y = np.asarray(y)
    yhat = np.asarray(yhat)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    yb = y > 0
    pb = yhat > 0
    tp = int(np.count_nonzero(yb & pb))
    fp = int(np.count_nonzero(~yb & pb))
    fn = int(np.count_nonzero(yb & ~pb))
    tn = int(np.count_nonzero(~yb & ~pb))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def dice(c: ConfusionCounts) -> float:
    den = 2 * c.tp + c.fp + c.fn
    return 1.0 if den == 0 else 2.0 * c.tp / den


def sensitivity(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        return 1.0 if c.fp == 0 else 0.0
    return c.tp / (c.tp + c.fn)


def precision(c: ConfusionCounts) -> float:
    if c.tp + c.fp == 0:
        return 1.0 if c.fn == 0 else 0.0
    return c.tp / (c.tp + c.fp)


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation; 0.0 whenever a denominator factor vanishes.

    Counts are combined in exact integer arithmetic before the square root so
    large images cannot overflow.
    """
    f1 = c.tp + c.fp
    f2 = c.tp + c.fn
    f3 = c.tn + c.fp
    f4 = c.tn + c.fn
    if f1 == 0 or f2 == 0 or f3 == 0 or f4 == 0:
        return 0.0
    num = c.tp * c.tn - c.fp * c.fn
    return num / math.sqrt(f1 * f2) / math.sqrt(f3 * f4)


def pr_auc(y: np.ndarray, prob: np.ndarray) -> float:
    """Area under the precision-recall curve via step-wise average precision.

    Thresholds sweep the distinct scores (ties share one curve point); the
    area is sum over points of (R_k - R_{k-1}) * P_k. Requires at least one
    foreground pixel in y.
    """
    y = np.asarray(y)
    prob = np.asarray(prob)
    if y.shape != prob.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {prob.shape}")
    labels = (y > 0).ravel()
    scores = prob.ravel().astype(np.float64)
    total_pos = int(labels.sum())
    if total_pos == 0:
        raise ValueError("undefined PR-AUC: ground truth has no foreground pixels")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    cum_tp = np.cumsum(labels[order])
    n = scores.size
    # Last index of each tie group = a distinct threshold point.
    group_end = np.nonzero(np.append(sorted_scores[:-1] != sorted_scores[1:], True))[0]
    tp_k = cum_tp[group_end].astype(np.float64)
    predicted_k = (group_end + 1).astype(np.float64)
    prec_k = tp_k / predicted_k
    rec_k = tp_k / total_pos
    rec_prev = np.concatenate([[0.0], rec_k[:-1]])
    return float(np.sum((rec_k - rec_prev) * prec_k))


TP_COLOR = (255, 255, 0)
FP_COLOR = (255, 0, 0)
FN_COLOR = (0, 255, 0)
TN_COLOR = (0, 0, 0)


def overlay(y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    """Composite error image: TP yellow, FP red, FN green, TN black."""
    y = np.asarray(y)
    yhat = np.asarray(yhat)
    if y.shape != yhat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    yb = y > 0
    pb = yhat > 0
    rgb = np.zeros((*y.shape, 3), dtype=np.uint8)
    rgb[yb & pb] = TP_COLOR
    rgb[~yb & pb] = FP_COLOR
    rgb[yb & ~pb] = FN_COLOR
    return rgb


@dataclass
class MetricRow:
    name: str
    loss: float | None = None
    dice: float | None = None
    sensitivity: float | None = None
    precision: float | None = None
    mcc: float | None = None
    pr_auc: float | None = None
    error: str | None = None

    def values(self) -> tuple:
        return (self.loss, self.dice, self.sensitivity, self.precision, self.mcc, self.pr_auc)


@dataclass
class MetricsReport:
    rows: list[MetricRow]
    mean: MetricRow
    pooled: MetricRow | None = None


def evaluate_predictions(
    names: list[str],
    masks_true: list[np.ndarray],
    probs: list[np.ndarray],
    tau: float = 0.5,
    weights: LossWeights = LossWeights(),
    pooled: bool = False,
) -> MetricsReport:
    """Score probability maps against ground-truth masks.

    Per-image failures (e.g. undefined PR-AUC on an empty mask) are recorded
    in the row and excluded from the aggregate means.
    """
    rows: list[MetricRow] = []
    for name, y, prob in zip(names, masks_true, probs):
        try:
            pred = threshold(prob, tau)
            c = confusion(y, pred)
            loss = float(
                wbce_loss(
                    torch.as_tensor(np.ascontiguousarray(y), dtype=torch.float32),
                    torch.as_tensor(np.ascontiguousarray(prob), dtype=torch.float32),
                    weights,
                )
            )
            rows.append(
                MetricRow(
                    name=name,
                    loss=loss,
                    dice=dice(c),
                    sensitivity=sensitivity(c),
                    precision=precision(c),
                    mcc=mcc(c),
                    pr_auc=pr_auc(y, prob),
                )
            )
        except ValueError as exc:
            rows.append(MetricRow(name=name, error=str(exc)))

    ok = [r for r in rows if r.error is None]
    if ok:
        mean = MetricRow(
            name="mean",
            loss=float(np.mean([r.loss for r in ok])),
            dice=float(np.mean([r.dice for r in ok])),
            sensitivity=float(np.mean([r.sensitivity for r in ok])),
            precision=float(np.mean([r.precision for r in ok])),
            mcc=float(np.mean([r.mcc for r in ok])),
            pr_auc=float(np.mean([r.pr_auc for r in ok])),
        )
    else:
        mean = MetricRow(name="mean", error="no successfully evaluated images")

    pooled_row = None
    if pooled:
        y_all = np.concatenate([np.asarray(m).ravel() for m in masks_true])
        p_all = np.concatenate([np.asarray(p).ravel() for p in probs])
        c = confusion(y_all, threshold(p_all, tau))
        pooled_row = MetricRow(
            name="pooled",
            loss=float(
                wbce_loss(
                    torch.as_tensor(y_all, dtype=torch.float32),
                    torch.as_tensor(p_all, dtype=torch.float32),
                    weights,
                )
            ),
            dice=dice(c),
            sensitivity=sensitivity(c),
            precision=precision(c),
            mcc=mcc(c),
            pr_auc=pr_auc(y_all, p_all),
        )
    return MetricsReport(rows=rows, mean=mean, pooled=pooled_row)


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def report_csv(report: MetricsReport) -> str:
    lines = ["name,loss,dice,sensitivity,precision,mcc,pr_auc,error"]
    for row in report.rows + [report.mean] + ([report.pooled] if report.pooled else []):
        vals = ",".join("" if v is None else f"{v:.6f}" for v in row.values())
        lines.append(f"{row.name},{vals},{row.error or ''}")
    return "\n".join(lines) + "\n"


def format_table(named_rows: list[tuple[str, MetricRow]], label: str = "Model") -> str:
    """Aligned plain-text table in the canonical column order."""
    width = max([len(label)] + [len(n) for n, _ in named_rows]) + 2
    header = f"{label:<{width}}" + "".join(f"{c:>9}" for c in COLUMNS)
    lines = [header, "-" * len(header)]
    for name, row in named_rows:
        cells = "".join(f"{_fmt(v):>9}" for v in row.values())
        lines.append(f"{name:<{width}}" + cells)
    return "\n".join(lines)


def write_report(report: MetricsReport, out_dir: str) -> tuple[str, str]:
    """Write machine-readable CSV and the aligned text table; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "report.csv")
    txt_path = os.path.join(out_dir, "report.txt")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report_csv(report))
    named = [(r.name, r) for r in report.rows] + [("mean", report.mean)]
    if report.pooled:
        named.append(("pooled", report.pooled))
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(format_table(named, label="Image") + "\n")
    return csv_path, txt_path


def write_overlays(
    names: list[str], masks_true: list[np.ndarray], masks_pred: list[np.ndarray], out_dir: str
) -> list[str]:
    overlays_dir = os.path.join(out_dir, "overlays")
    os.makedirs(overlays_dir, exist_ok=True)
    paths = []
    for name, y, pred in zip(names, masks_true, masks_pred):
        path = os.path.join(overlays_dir, name + ".png")
        pngio.write_rgb_png(path, overlay(y, pred))
        paths.append(path)
    return paths
