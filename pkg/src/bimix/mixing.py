"""Class-guided masks and sample mixing for both mixing directions.

Trans2Seg pastes a random half of the source classes onto a night image;
Seg2Trans pastes the day image's dynamic-object pixels onto its night pair.
"""
from __future__ import annotations

import math

import numpy as np
import torch

from .exceptions import DimensionError, EmptyClassesError
from .imgcore import IGNORE_ID, ConfidenceMap


def present_classes(y: torch.Tensor) -> list[int]:
    ids = torch.unique(y).tolist()
    return [int(c) for c in ids if c != IGNORE_ID]


def sample_half_classes(y: torch.Tensor, rng: np.random.Generator) -> frozenset[int]:
    """Draw ``ceil(n / 2)`` of the ``n`` classes present in ``y`` without replacement."""
    classes = present_classes(y)
    if not classes:
        raise EmptyClassesError("label map holds no non-ignored pixels")
    k = math.ceil(len(classes) / 2)
    chosen = rng.choice(np.asarray(classes), size=k, replace=False)
    return frozenset(int(c) for c in chosen)


def mask_from_classes(y: torch.Tensor, classes) -> torch.Tensor:
    ids = torch.as_tensor(sorted(classes), dtype=y.dtype)
    return torch.isin(y, ids).to(torch.uint8)


def dynamic_mask(day_pred: ConfidenceMap, dynamic) -> torch.Tensor:
    """Mask of pixels whose day prediction is a dynamic class. Never carries gradient."""
    labels = day_pred.labels.detach()
    ids = torch.as_tensor(sorted(dynamic), dtype=labels.dtype)
    return torch.isin(labels, ids).to(torch.uint8)


def mix_images(a: torch.Tensor, b: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Take ``a`` where ``m`` is 1 and ``b`` elsewhere; ``m`` broadcasts over channels."""
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if m.shape[-2:] != a.shape[-2:]:
        raise DimensionError(f"mask {tuple(m.shape)} does not match image {tuple(a.shape)}")
    return torch.where(m.bool().unsqueeze(-3), a, b)


def mix_labels(y_s: torch.Tensor, p_n: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Source labels inside the mask, night pseudo-labels (argmax of ``p_n``) outside."""
    if y_s.shape != m.shape or p_n.shape[-2:] != y_s.shape[-2:]:
        raise DimensionError("label, mask and probability map shapes disagree")
    pseudo = p_n.detach().argmax(dim=-3).to(y_s.dtype)
    return torch.where(m.bool(), y_s, pseudo)
