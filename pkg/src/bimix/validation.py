"""Input checks converting user arrays (``N x H x W x 3`` images) to network tensors."""
from __future__ import annotations

import numpy as np
import torch

from .exceptions import DimensionError, LabelError, PairingError
from .imgcore import IGNORE_ID


def check_images(x, name: str = "X") -> torch.Tensor:
    """Images as ``N x H x W x 3`` uint8 or float in [0, 1]; returns float32 ``N x 3 x H x W``."""
    arr = np.asarray(x)
    if arr.ndim == 3 and arr.shape[-1] == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise DimensionError(f"{name} must have shape (N, H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0:
        raise DimensionError(f"{name} is empty")
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    elif np.issubdtype(arr.dtype, np.floating):
        if not np.isfinite(arr).all():
            raise ValueError(f"{name} contains NaN or infinite values")
        if arr.min() < 0 or arr.max() > 1:
            raise ValueError(f"{name} float values must lie in [0, 1]")
        arr = arr.astype(np.float32)
    else:
        raise TypeError(f"{name} must be uint8 or floating point, got {arr.dtype}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def check_label_maps(y, num_classes: int, images: torch.Tensor | None = None, name: str = "y") -> torch.Tensor:
    """Integer label maps ``N x H x W`` with ids in ``[0, C)`` or the ignore id."""
    arr = np.asarray(y)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionError(f"{name} must have shape (N, H, W), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError(f"{name} must hold integer class ids, got {arr.dtype}")
    if images is not None and (arr.shape[0] != images.shape[0] or arr.shape[1:] != tuple(images.shape[2:])):
        raise DimensionError(f"{name} shape {arr.shape} does not match images {tuple(images.shape)}")
    bad = (arr != IGNORE_ID) & ((arr < 0) | (arr >= num_classes))
    if bad.any():
        raise LabelError(f"{name} holds ids outside [0, {num_classes}) other than {IGNORE_ID}")
    return torch.from_numpy(arr.astype(np.int64))


def check_pairs(day: torch.Tensor, night: torch.Tensor) -> None:
    if day.shape != night.shape:
        raise PairingError(f"day images {tuple(day.shape)} and night images {tuple(night.shape)} must pair up")
