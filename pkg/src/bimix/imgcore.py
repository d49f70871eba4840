"""Image and tensor primitives shared by the losses and the mixing branches.

Images are float tensors laid out ``(..., 3, H, W)``, label maps integer
tensors ``(..., H, W)`` and probability maps ``(..., C, H, W)``.
"""
from __future__ import annotations

import functools
from typing import NamedTuple

import torch
import torch.nn.functional as F

from .exceptions import DimensionError, LabelError

IGNORE_ID = 255

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
DYNAMIC_RANGE = 1.0
SSIM_C1 = (0.01 * DYNAMIC_RANGE) ** 2
SSIM_C2 = (0.03 * DYNAMIC_RANGE) ** 2


class ConfidenceMap(NamedTuple):
    labels: torch.Tensor
    conf: torch.Tensor


def _check_same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def average_pool(img: torch.Tensor, k: int) -> torch.Tensor:
    """Mean over non-overlapping ``k x k`` blocks, per channel."""
    h, w = img.shape[-2:]
    if h % k or w % k:
        raise DimensionError(f"image {h}x{w} is not divisible by pool size {k}")
    lead = img.shape[:-2]
    flat = img.reshape(-1, 1, h, w)
    # averaging offsets from each block's corner keeps constant blocks exact
    ref = flat[..., ::k, ::k]
    pooled = ref + F.avg_pool2d(flat - upsample_blocks(ref, k), kernel_size=k, stride=k)
    return pooled.reshape(*lead, h // k, w // k)


def upsample_blocks(pooled: torch.Tensor, k: int) -> torch.Tensor:
    """Broadcast every pooled cell back over its ``k x k`` block."""
    return pooled.repeat_interleave(k, dim=-2).repeat_interleave(k, dim=-1)


def spatial_gradients(img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward differences along columns and rows; the trailing column/row is zero."""
    gx = torch.zeros_like(img)
    gy = torch.zeros_like(img)
    gx[..., :, :-1] = img[..., :, 1:] - img[..., :, :-1]
    gy[..., :-1, :] = img[..., 1:, :] - img[..., :-1, :]
    return gx, gy


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA,
                    dtype: torch.dtype = torch.float64) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    return (g / g.sum()).to(dtype)


def reflect_indices(n: int, pad: int) -> torch.Tensor:
    """Indices of ``range(-pad, n + pad)`` folded back into ``[0, n)`` by mirror reflection.

    Unlike ``F.pad(mode="reflect")`` this works for any ``n``, including
    dimensions smaller than the padding.
    """
    idx = torch.arange(-pad, n + pad)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    idx = idx.remainder(period)
    return torch.where(idx >= n, period - idx, idx)


def filter_matrix(n: int, window: torch.Tensor) -> torch.Tensor:
    """``n x n`` matrix applying ``window`` along one axis with reflect padding folded in."""
    pad = window.numel() // 2
    idx = reflect_indices(n, pad)
    mat = torch.zeros(n, n, dtype=window.dtype)
    for i in range(n):
        mat[i].index_add_(0, idx[i:i + window.numel()], window)
    return mat


@functools.lru_cache(maxsize=32)
def _ssim_filter_matrix(n: int, dtype: torch.dtype) -> torch.Tensor:
    return filter_matrix(n, gaussian_window(dtype=dtype))


def _gaussian_filter(x: torch.Tensor) -> torch.Tensor:
    # separable blur as G_h @ x @ G_w^T
    h, w = x.shape[-2:]
    gh = _ssim_filter_matrix(h, x.dtype)
    gw = _ssim_filter_matrix(w, x.dtype)
    return gh @ x @ gw.T


def ssim_map(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-pixel, per-channel SSIM with an 11x11 Gaussian window (sigma 1.5)."""
    _check_same_shape(a, b)
    shape = a.shape
    h, w = shape[-2:]
    a4 = a.reshape(-1, shape[-3] if a.dim() >= 3 else 1, h, w)
    b4 = b.reshape(a4.shape)
    stacked = _gaussian_filter(torch.stack([a4, b4, a4 * a4, b4 * b4, a4 * b4]))
    mu_a, mu_b, e_aa, e_bb, e_ab = stacked.unbind(0)
    var_a = e_aa - mu_a ** 2
    var_b = e_bb - mu_b ** 2
    cov = e_ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return (num / den).reshape(shape)


def argmax_confidence(p: torch.Tensor) -> ConfidenceMap:
    """Per-pixel winning class (lowest id on ties) and its probability."""
    conf, labels = p.max(dim=-3)
    return ConfidenceMap(labels=labels, conf=conf)


def one_hot(y: torch.Tensor, num_classes: int) -> torch.Tensor:
    """``(..., H, W)`` labels to ``(..., C, H, W)`` indicators; ignore pixels are all-zero."""
    valid = y != IGNORE_ID
    bad = valid & ((y < 0) | (y >= num_classes))
    if bool(bad.any()):
        raise LabelError(f"label ids must lie in [0, {num_classes}) or equal {IGNORE_ID}")
    safe = torch.where(valid, y, torch.zeros_like(y)).long()
    out = F.one_hot(safe, num_classes).movedim(-1, -3)
    return out * valid.unsqueeze(-3)
