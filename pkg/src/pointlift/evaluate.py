"""Segmentation metrics: per-point confusion tally and mean IoU."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .projection import UNLABELED


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns predictions.

    Unlabeled predictions are tallied separately per truth class: they count
    in the IoU union (as false negatives) but never in the intersection.
    Points with unlabeled ground truth are ignored entirely.
    """

    counts: np.ndarray  # (C, C) int64
    unlabeled_pred: np.ndarray  # (C,) int64
    ignored: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.unlabeled_pred = np.asarray(self.unlabeled_pred, dtype=np.int64)
        c = self.counts.shape[0]
        if self.counts.shape != (c, c) or self.unlabeled_pred.shape != (c,):
            raise ValueError("inconsistent confusion matrix shapes")
        if (self.counts < 0).any() or (self.unlabeled_pred < 0).any() or self.ignored < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum() + self.unlabeled_pred.sum() + self.ignored)


def confusion(gt: np.ndarray, pred: np.ndarray, n_classes: int) -> ConfusionMatrix:
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError("gt/pred length mismatch")
    keep = gt != UNLABELED
    ignored = int((~keep).sum())
    g = gt[keep].astype(np.int64)
    p = pred[keep]
    if (g >= n_classes).any():
        raise ValueError("ground-truth label outside the class range")
    unl = p == UNLABELED
    unlabeled_pred = np.bincount(g[unl], minlength=n_classes)
    g2, p2 = g[~unl], p[~unl].astype(np.int64)
    if len(p2) and (p2 >= n_classes).any():
        raise ValueError("predicted label outside the class range")
    counts = np.bincount(g2 * n_classes + p2, minlength=n_classes * n_classes)
    return ConfusionMatrix(
        counts=counts.reshape(n_classes, n_classes),
        unlabeled_pred=unlabeled_pred,
        ignored=ignored,
    )


def iou_from_counts(tp: float, fp: float, fn: float) -> float:
    denom = tp + fp + fn
    return tp / denom if denom > 0 else float("nan")


def miou(cm: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN for classes absent from both gt and pred) and mean.

    Absent classes are excluded from the mean; unlabeled predictions
    contribute to the union via false negatives.
    """
    tp = np.diag(cm.counts).astype(np.float64)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp + cm.unlabeled_pred
    present = (cm.counts.sum(axis=1) + cm.unlabeled_pred + cm.counts.sum(axis=0)) > 0
    ious = np.full(cm.n_classes, np.nan)
    for c in np.nonzero(present)[0]:
        ious[c] = iou_from_counts(tp[c], fp[c], fn[c])
    mean = float(np.nanmean(ious)) if present.any() else float("nan")
    return ious, mean


def write_metrics(path: str, cm: ConfusionMatrix, class_names: list[str]) -> None:
    """Write per-class IoU and mIoU as percentages, plus the ignored count."""
    ious, mean = miou(cm)
    obj = {
        "per_class_iou": {
            name: (None if np.isnan(ious[c]) else round(100.0 * ious[c], 4))
            for c, name in enumerate(class_names)
        },
        "miou": None if np.isnan(mean) else round(100.0 * mean, 4),
        "ignored": cm.ignored,
    }
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
