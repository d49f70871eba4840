"""Scikit-learn style wrapper around pretraining and adaptation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import DESK
from .evaluation import ConfusionMatrix, accumulate, miou
from .exceptions import DimensionError
from .trainer import adapt, build_networks, pretrain
from .validation import check_images, check_label_maps, check_pairs


@dataclass
class _Arrays:
    source_images: torch.Tensor
    source_labels: torch.Tensor
    day_images: torch.Tensor
    night_images: torch.Tensor
    pair_ids: list
    test_images: torch.Tensor | None = None
    test_labels: torch.Tensor | None = None


class BiMixSegmenter(BaseEstimator):
    """Night-time segmenter trained from labeled day images plus unlabeled day/night pairs.

    ``fit`` pretrains the segmenter on ``(X, y)`` and then adapts it with the
    chosen mixing ``mode`` using ``day``/``night`` pairs of the same scenes.
    Images are ``N x H x W x 3`` (uint8 or float in [0, 1]); label maps are
    ``N x H x W`` with 255 marking unlabeled pixels.
    """

    def __init__(self, num_classes=8, mode="bimix", relight=True, mu1=0.001, mu2=0.001, mu3=1.0,
                 pretrain_iters=1500, max_iters=3000, pretrain_lr=DESK.pretrain_lr,
                 base_lr=DESK.base_lr, disc_lr=DESK.disc_lr, batch_size=2,
                 dynamic_classes=(4, 5), seed=0):
        self.num_classes = num_classes
        self.mode = mode
        self.relight = relight
        self.mu1 = mu1
        self.mu2 = mu2
        self.mu3 = mu3
        self.pretrain_iters = pretrain_iters
        self.max_iters = max_iters
        self.pretrain_lr = pretrain_lr
        self.base_lr = base_lr
        self.disc_lr = disc_lr
        self.batch_size = batch_size
        self.dynamic_classes = dynamic_classes
        self.seed = seed

    def _config(self, image_size: int):
        return DESK.replace(
            num_classes=self.num_classes, mode=self.mode, relight_enabled=self.relight,
            mu1=self.mu1, mu2=self.mu2, mu3=self.mu3, pretrain_iters=self.pretrain_iters,
            max_iters=self.max_iters, pretrain_lr=self.pretrain_lr, base_lr=self.base_lr,
            disc_lr=self.disc_lr, batch_size=self.batch_size,
            dynamic_classes=tuple(self.dynamic_classes), seed=self.seed, image_size=image_size,
        )

    def fit(self, X, y, *, day, night):
        xs = check_images(X, "X")
        ys = check_label_maps(y, self.num_classes, xs)
        d, n = check_images(day, "day"), check_images(night, "night")
        check_pairs(d, n)
        if d.shape[2:] != xs.shape[2:]:
            raise DimensionError("source and target images must share one resolution")
        cfg = self._config(int(xs.shape[-1]))
        data = _Arrays(xs, ys, d, n, [str(i) for i in range(len(d))])

        self.history_ = {"pretrain": [], "adapt": []}
        nets = build_networks(cfg)
        ckpt = pretrain(data, nets, cfg, on_step=self.history_["pretrain"].append)
        self.pretrained_ = ckpt
        ckpt, nets = adapt(data, ckpt, cfg, on_step=self.history_["adapt"].append)
        self.checkpoint_, self.networks_, self.config_ = ckpt, nets, cfg
        self.n_features_in_ = 3
        return self

    def _forward(self, X):
        check_is_fitted(self, "networks_")
        x = check_images(X)
        nets = self.networks_
        with torch.no_grad():
            if self.config_.relight_enabled:
                x = x + nets.relight(x)
            return torch.softmax(nets.seg(x), dim=1)

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities ``N x H x W x C``."""
        return self._forward(X).permute(0, 2, 3, 1).numpy()

    def predict(self, X) -> np.ndarray:
        return self._forward(X).argmax(dim=1).numpy()

    def transform(self, X) -> np.ndarray:
        """Relit images ``N x H x W x 3`` (input plus predicted residual)."""
        check_is_fitted(self, "networks_")
        x = check_images(X)
        with torch.no_grad():
            if self.config_.relight_enabled:
                x = x + self.networks_.relight(x)
        return x.permute(0, 2, 3, 1).numpy()

    def score(self, X, y) -> float:
        """Mean IoU of the predictions against ``y``."""
        pred = self.predict(X)
        gt = check_label_maps(y, self.num_classes).numpy()
        if gt.shape != pred.shape:
            raise DimensionError(f"labels {gt.shape} do not match predictions {pred.shape}")
        return miou(accumulate(ConfusionMatrix(self.num_classes), pred, gt))[1]
