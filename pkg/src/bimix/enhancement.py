"""Relighting network and the self-supervised enhancement losses."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .imgcore import (
    _check_same_shape,
    average_pool,
    spatial_gradients,
    ssim_map,
    upsample_blocks,
)

DEFAULT_ALPHAS = (10.0, 1.0, 1.0)


class RelightNet(nn.Module):
    """Strided conv encoder / transposed-conv decoder predicting a residual image.

    The last layer starts at zero, so a fresh network leaves images untouched.
    With ``widths=()`` the network is a single 3x3 convolution.
    """

    def __init__(self, widths=(16, 32, 64)):
        super().__init__()
        self.widths = tuple(widths)
        if not self.widths:
            self.encoder = nn.Sequential()
            self.decoder = nn.Sequential(nn.Conv2d(3, 3, 3, padding=1))
        else:
            enc, prev = [], 3
            for w in self.widths:
                enc += [nn.Conv2d(prev, w, 3, stride=2, padding=1), nn.ReLU()]
                prev = w
            dec = []
            for w in reversed(self.widths[:-1]):
                dec += [nn.ConvTranspose2d(prev, w, 4, stride=2, padding=1), nn.ReLU()]
                prev = w
            dec.append(nn.ConvTranspose2d(prev, 3, 4, stride=2, padding=1))
            self.encoder = nn.Sequential(*enc)
            self.decoder = nn.Sequential(*dec)
        last = self.decoder[-1]
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)

    def forward(self, x):
        h, w = x.shape[-2:]
        step = 2 ** len(self.widths)
        ph, pw = (-h) % step, (-w) % step
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="replicate")
        out = self.decoder(self.encoder(x))
        return out[..., :h, :w]


def relight(net: RelightNet, img: torch.Tensor) -> torch.Tensor:
    return net(img)


def enhance(net: RelightNet, img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(residual, residual + img)``. Nothing is clamped."""
    residual = net(img)
    return residual, residual + img


def loss_tv(img: torch.Tensor, residual: torch.Tensor) -> torch.Tensor:
    """Mean of squared forward differences of ``img - residual``."""
    _check_same_shape(img, residual)
    gx, gy = spatial_gradients(img - residual)
    return (gx ** 2 + gy ** 2).abs().mean()


def loss_exposure(residual: torch.Tensor, enhanced: torch.Tensor, k: int = 32) -> torch.Tensor:
    """Mean absolute gap between the block-averaged residual and the enhanced image."""
    _check_same_shape(residual, enhanced)
    pooled = upsample_blocks(average_pool(residual, k), k)
    return (pooled - enhanced).abs().mean()


def loss_ssim(img: torch.Tensor, residual: torch.Tensor) -> torch.Tensor:
    return (1 - ssim_map(img, residual)).abs().mean() / 2


def loss_consistency(residual_mixed: torch.Tensor, residual_day: torch.Tensor) -> torch.Tensor:
    """L1 between the mixed-image residual and the day residual; the day side is a fixed target."""
    _check_same_shape(residual_mixed, residual_day)
    return (residual_mixed - residual_day.detach()).abs().mean()


@dataclass
class EnhancementLossReport:
    tv: torch.Tensor
    exp: torch.Tensor
    ssim: torch.Tensor
    total: torch.Tensor


def enhancement_losses(images, residuals, alphas=DEFAULT_ALPHAS, pool_k: int = 32) -> EnhancementLossReport:
    """Average each loss over the given images and combine with ``alphas``.

    ``images`` and ``residuals`` are parallel sequences (one entry per domain).
    """
    a_tv, a_exp, a_ssim = alphas
    n = len(images)
    tv = sum(loss_tv(i, r) for i, r in zip(images, residuals)) / n
    exp = sum(loss_exposure(r, r + i, pool_k) for i, r in zip(images, residuals)) / n
    ssim = sum(loss_ssim(i, r) for i, r in zip(images, residuals)) / n
    total = a_tv * tv + a_exp * exp + a_ssim * ssim
    return EnhancementLossReport(tv=tv, exp=exp, ssim=ssim, total=total)


def loss_enhance_total(img_s, img_d, img_n, net: RelightNet, alphas=DEFAULT_ALPHAS,
                       pool_k: int = 32) -> EnhancementLossReport:
    images = (img_s, img_d, img_n)
    return enhancement_losses(images, [net(i) for i in images], alphas, pool_k)
