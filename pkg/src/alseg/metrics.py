"""Confusion-matrix IoU and label-efficiency summaries."""
from __future__ import annotations

import math

import numpy as np

from .config import IGNORE_INDEX


class ConfusionMatrix:
    """C×C counts, rows = ground truth, columns = prediction. Mergeable by `+`."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64) if counts is None else counts

    def accumulate(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        pred = np.asarray(pred).ravel().astype(np.int64)
        gt = np.asarray(gt).ravel().astype(np.int64)
        if pred.shape != gt.shape:
            raise ValueError("prediction and ground truth shapes differ")
        keep = gt != IGNORE_INDEX
        pred, gt = pred[keep], gt[keep]
        C = self.num_classes
        if gt.size and (gt.max() >= C or pred.max() >= C or gt.min() < 0 or pred.min() < 0):
            raise ValueError(f"label outside [0, {C})")
        self.counts += np.bincount(gt * C + pred, minlength=C * C).reshape(C, C)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def iou(self) -> tuple[np.ndarray, float]:
        return iou(self.counts)


def iou(cm: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where a class is absent from both gt and pred) and their mean.

    mIoU is NaN when no class is present at all.
    """
    cm = np.asarray(cm, dtype=np.float64)
    inter = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(union > 0, inter / np.where(union > 0, union, 1), np.nan)
    present = union > 0
    miou = float(per_class[present].mean()) if present.any() else math.nan
    return per_class, miou


NOT_REACHED = None


def efficiency_summary(reports, reference_miou: float, ratio: float = 0.95):
    """Smallest labeled fraction whose mIoU >= ratio * reference, else NOT_REACHED.

    reports: iterable of (labeled_fraction, miou) pairs.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports given")
    target = ratio * reference_miou
    hits = [f for f, m in reports if m >= target]
    return min(hits) if hits else NOT_REACHED
