"""Confusion-matrix bookkeeping and IoU reporting."""
from __future__ import annotations

import numpy as np
import torch

from .exceptions import DimensionError, EmptyEvalError
from .imgcore import IGNORE_ID


class ConfusionMatrix:
    """Counts with rows indexed by ground truth and columns by prediction."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = counts

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _as_numpy(a):
    if torch.is_tensor(a):
        return a.detach().cpu().numpy()
    return np.asarray(a)


def accumulate(cm: ConfusionMatrix, pred, gt) -> ConfusionMatrix:
    pred, gt = _as_numpy(pred), _as_numpy(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    keep = gt != IGNORE_ID
    n = cm.num_classes
    idx = n * gt[keep].astype(np.int64) + pred[keep].astype(np.int64)
    cm.counts += np.bincount(idx, minlength=n * n).reshape(n, n)
    return cm


def miou(cm: ConfusionMatrix) -> tuple[list[float | None], float]:
    """Per-class IoU (``None`` for classes absent from both gt and prediction) and their mean."""
    if cm.total == 0:
        raise EmptyEvalError("confusion matrix is empty")
    inter = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(0) + cm.counts.sum(1) - inter
    ious = [float(i / u) if u > 0 else None for i, u in zip(inter, union)]
    defined = [v for v in ious if v is not None]
    return ious, float(np.mean(defined))


def report(cm: ConfusionMatrix, class_names) -> dict:
    ious, mean = miou(cm)
    return {
        "per_class_iou": {name: iou for name, iou in zip(class_names, ious)},
        "miou": mean,
        "pixel_count": cm.total,
    }


@torch.no_grad()
def predict(nets, images: torch.Tensor, relight_enabled: bool = True, batch_size: int = 16) -> torch.Tensor:
    """Argmax label maps for ``images`` after relighting."""
    out = []
    for i in range(0, len(images), batch_size):
        x = images[i:i + batch_size]
        if relight_enabled:
            x = x + nets.relight(x)
        out.append(nets.seg(x).argmax(dim=1))
    return torch.cat(out) if out else torch.empty(0, dtype=torch.long)


def evaluate(nets, images, labels, num_classes: int, relight_enabled: bool = True) -> ConfusionMatrix:
    cm = ConfusionMatrix(num_classes)
    return accumulate(cm, predict(nets, images, relight_enabled), labels)
