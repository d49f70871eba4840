"""Segmentation network and its supervised, mixed and self-supervised losses."""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import DimensionError
from .imgcore import IGNORE_ID, one_hot

LOG_EPS = 1e-8


class SegNet(nn.Module):
    """Four conv blocks (the first two strided), a 1x1 classifier and bilinear upsampling.

    ``forward`` returns logits at input resolution; use :func:`seg_forward`
    for probabilities.
    """

    def __init__(self, num_classes: int, widths=(16, 32, 32, 32)):
        super().__init__()
        self.num_classes = num_classes
        layers, prev = [], 3
        for i, w in enumerate(widths):
            layers += [nn.Conv2d(prev, w, 3, stride=2 if i < 2 else 1, padding=1), nn.ReLU()]
            prev = w
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Conv2d(prev, num_classes, 1)

    def forward(self, x):
        logits = self.classifier(self.features(x))
        if logits.shape[-2:] != x.shape[-2:]:
            logits = F.interpolate(logits, size=x.shape[-2:], mode="bilinear", align_corners=False)
        return logits


def seg_forward(net: SegNet, img: torch.Tensor) -> torch.Tensor:
    return torch.softmax(net(img), dim=-3)


def _safe_log(p):
    return torch.log(p.clamp_min(LOG_EPS))


def loss_ce(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Cross-entropy normalised by pixel count times class count.

    Ignored pixels add nothing to the sum but still count towards the
    normaliser.
    """
    if p.shape[-2:] != y.shape[-2:] or p.shape[:-3] != y.shape[:-2]:
        raise DimensionError(f"prob map {tuple(p.shape)} vs labels {tuple(y.shape)}")
    c = p.shape[-3]
    target = one_hot(y, c).to(p.dtype)
    per_image = -(target * _safe_log(p)).sum(dim=(-3, -2, -1))
    n = y.shape[-2] * y.shape[-1]
    return (per_image / (n * c)).mean()


def loss_mixed_ce(p_m: torch.Tensor, y_m: torch.Tensor) -> torch.Tensor:
    return loss_ce(p_m, y_m)


def focal_weight(p_d_max: torch.Tensor, gamma: float) -> torch.Tensor:
    return (1 - p_d_max) ** gamma


def loss_focal_ssl(p_d: torch.Tensor, p_n: torch.Tensor, gamma: float = 1.0) -> torch.Tensor:
    """Focal self-training loss: day argmax classes supervise the paired night prediction.

    ``p_d`` is detached; gradient reaches ``p_n`` only.
    """
    if p_d.shape != p_n.shape:
        raise DimensionError(f"shape mismatch: {tuple(p_d.shape)} vs {tuple(p_n.shape)}")
    p_d = p_d.detach()
    conf, cls = p_d.max(dim=-3, keepdim=True)
    p_n_sel = p_n.gather(-3, cls)
    per_pixel = focal_weight(conf, gamma) * -_safe_log(p_n_sel)
    return per_pixel.mean()


def predict_labels(p: torch.Tensor) -> torch.Tensor:
    return p.argmax(dim=-3)

