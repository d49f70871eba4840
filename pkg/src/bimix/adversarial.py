"""Output-space discriminators and least-squares adversarial losses."""
from __future__ import annotations

import torch
from torch import nn


class Discriminator(nn.Module):
    """Strided 4x4 convolutions with LeakyReLU; output is a raw 1-channel realism map.

    The default four layers shrink the input 16-fold.
    """

    def __init__(self, num_classes: int, widths=(16, 32, 32)):
        super().__init__()
        layers, prev = [], num_classes
        for w in widths:
            layers += [nn.Conv2d(prev, w, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            prev = w
        layers.append(nn.Conv2d(prev, 1, 4, stride=2, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, p):
        return self.net(p)


def disc_forward(d: Discriminator, p: torch.Tensor) -> torch.Tensor:
    return d(p)


def loss_adv_gen(dd_out: torch.Tensor, dn_out: torch.Tensor) -> torch.Tensor:
    """Generator side: push both target realism maps towards 1."""
    return ((dd_out - 1) ** 2).mean() + ((dn_out - 1) ** 2).mean()


def loss_disc(dd_s, dn_s, dd_d, dn_n) -> torch.Tensor:
    """Source predictions are real (1) for both discriminators; day/night are fake (0)."""
    return (((dd_s - 1) ** 2).mean() + ((dn_s - 1) ** 2).mean()
            + (dd_d ** 2).mean() + (dn_n ** 2).mean())
