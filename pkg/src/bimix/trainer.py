"""Joint training of the relighting, segmentation and discriminator networks.

One iteration runs a generator update of the relighting and segmentation
networks (SGD, polynomial decay) followed by a discriminator update (Adam)
on detached predictions.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .adversarial import Discriminator, loss_adv_gen, loss_disc
from .config import Config
from .enhancement import RelightNet, enhancement_losses, loss_consistency
from .exceptions import CheckpointError, DataError, PairingError
from .imgcore import argmax_confidence
from .mixing import dynamic_mask, mask_from_classes, mix_images, mix_labels, sample_half_classes
from .rng import substream, torch_seed
from .segmentation import SegNet, loss_ce, loss_focal_ssl, loss_mixed_ce

log = logging.getLogger(__name__)

METRIC_KEYS = ("iter", "lr", "l_enhance", "l_tv", "l_exp", "l_ssim", "l_M", "l_adv",
               "l_D", "l_f2m", "l_m2f", "l_ssl", "total")


def poly_lr(it: int, base: float, max_iters: int, power: float = 0.9) -> float:
    if not 0 <= it <= max_iters:
        raise ValueError(f"iteration {it} outside [0, {max_iters}]")
    return base * (1 - it / max_iters) ** power


def total_objective(c: dict, cfg: Config):
    """Weighted sum of every loss term; branch terms vanish when their mode is off.

    ``c`` maps ``l_enhance, l_M, l_D, l_adv, l_f2m, l_m2f, l_ssl`` to floats or tensors.
    """
    total = c["l_enhance"] + c["l_M"] + c["l_D"] + c["l_adv"]
    if cfg.trans2seg:
        total = total + cfg.mu1 * c["l_f2m"]
    if cfg.seg2trans:
        total = total + cfg.mu2 * c["l_m2f"]
    return total + cfg.mu3 * c["l_ssl"]


@dataclass
class StepReport:
    iter: int
    lr: float
    l_enhance: float = 0.0
    l_tv: float = 0.0
    l_exp: float = 0.0
    l_ssim: float = 0.0
    l_M: float = 0.0
    l_adv: float = 0.0
    l_D: float = 0.0
    l_f2m: float = 0.0
    l_m2f: float = 0.0
    l_ssl: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Networks:
    relight: RelightNet
    seg: SegNet
    disc_day: Discriminator
    disc_night: Discriminator

    def modules(self) -> dict:
        return {"relight": self.relight, "seg": self.seg,
                "disc_day": self.disc_day, "disc_night": self.disc_night}

    def generator_parameters(self):
        return list(self.relight.parameters()) + list(self.seg.parameters())

    def discriminator_parameters(self):
        return list(self.disc_day.parameters()) + list(self.disc_night.parameters())


@dataclass
class Optimizers:
    gen: torch.optim.Optimizer
    disc: torch.optim.Optimizer


@dataclass
class Batch:
    source: torch.Tensor
    source_labels: torch.Tensor
    day: torch.Tensor
    night: torch.Tensor
    day_ids: list = field(default_factory=list)
    night_ids: list = field(default_factory=list)

    def check_pairing(self) -> None:
        if self.day.shape != self.night.shape:
            raise PairingError(f"day batch {tuple(self.day.shape)} vs night {tuple(self.night.shape)}")
        if list(self.day_ids) != list(self.night_ids):
            raise PairingError(f"day ids {self.day_ids} do not match night ids {self.night_ids}")


def _seeded(seed, name, factory):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(seed, "init", name))
        return factory()


def build_networks(cfg: Config) -> Networks:
    c = cfg.num_classes
    return Networks(
        relight=_seeded(cfg.seed, "relight", lambda: RelightNet(cfg.relight_widths)),
        seg=_seeded(cfg.seed, "seg", lambda: SegNet(c, cfg.seg_widths)),
        disc_day=_seeded(cfg.seed, "disc_day", lambda: Discriminator(c, cfg.disc_widths)),
        disc_night=_seeded(cfg.seed, "disc_night", lambda: Discriminator(c, cfg.disc_widths)),
    )


def build_optimizers(nets: Networks, cfg: Config) -> Optimizers:
    gen = torch.optim.SGD(nets.generator_parameters(), lr=cfg.base_lr,
                          momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    disc = torch.optim.Adam(nets.discriminator_parameters(), lr=cfg.disc_lr,
                            betas=tuple(cfg.adam_betas))
    return Optimizers(gen=gen, disc=disc)


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def _requires_grad(params, flag):
    for p in params:
        p.requires_grad_(flag)


def trans2seg_loss(nets: Networks, src, y_s, night, p_n, rng, relight_enabled: bool = True):
    """Mixed cross-entropy on source classes pasted over the night image.

    The night prediction ``p_n`` only supplies hard pseudo-labels.
    """
    masks = torch.stack([mask_from_classes(y, sample_half_classes(y, rng)) for y in y_s])
    mixed = mix_images(src, night, masks)
    mixed_en = mixed + nets.relight(mixed) if relight_enabled else mixed
    p_m = torch.softmax(nets.seg(mixed_en), dim=1)
    return loss_mixed_ce(p_m, mix_labels(y_s, p_n, masks))


def seg2trans_loss(nets: Networks, day, night, p_d, res_d, dynamic):
    """Consistency between the relit day/night mix and the day residual.

    The mask comes from the detached day prediction, so no gradient reaches
    the segmentation network.
    """
    m = dynamic_mask(argmax_confidence(p_d.detach()), dynamic)
    mixed = mix_images(day, night, m)
    return loss_consistency(nets.relight(mixed), res_d)


def train_step(batch: Batch, nets: Networks, opts: Optimizers, cfg: Config, it: int,
               rng: np.random.Generator | None = None) -> StepReport:
    """One generator update followed by one discriminator update.

    ``rng`` feeds the Trans2Seg class sampling and is only drawn from when
    that branch is active; by default it is the per-iteration substream.
    """
    batch.check_pairing()
    if it >= cfg.max_iters:
        raise ValueError(f"iteration {it} is past max_iters={cfg.max_iters}")
    lr = poly_lr(it, cfg.base_lr, cfg.max_iters, cfg.lr_power)
    _set_lr(opts.gen, lr)
    _set_lr(opts.disc, poly_lr(it, cfg.disc_lr, cfg.max_iters, cfg.lr_power))

    src, y_s, day, night = batch.source, batch.source_labels, batch.day, batch.night
    b = src.shape[0]
    discs = nets.discriminator_parameters()
    _requires_grad(discs, False)

    # translation, then segmentation of all three domains
    raw = torch.cat([src, day, night])
    if cfg.relight_enabled:
        residual = nets.relight(raw)
        enhanced = raw + residual
    else:
        residual = torch.zeros_like(raw)
        enhanced = raw
    probs = torch.softmax(nets.seg(enhanced), dim=1)
    p_s, p_d, p_n = probs.split(b)
    res_s, res_d, res_n = residual.split(b)

    zero = raw.new_zeros(())
    if cfg.relight_enabled:
        enh = enhancement_losses((src, day, night), (res_s, res_d, res_n), cfg.alphas, cfg.pool_k)
        l_enhance, l_tv, l_exp, l_ssim = enh.total, enh.tv, enh.exp, enh.ssim
    else:
        l_enhance = l_tv = l_exp = l_ssim = zero

    # Trans2Seg: half the source classes pasted onto the night image
    l_f2m = zero
    if cfg.trans2seg:
        if rng is None:
            rng = substream(cfg.seed, "classes", it)
        l_f2m = trans2seg_loss(nets, src, y_s, night, p_n, rng, cfg.relight_enabled)

    # Seg2Trans: day dynamic objects pasted onto the night image
    l_m2f = zero
    if cfg.seg2trans and cfg.relight_enabled:
        l_m2f = seg2trans_loss(nets, day, night, p_d, res_d, cfg.dynamic_classes)

    l_M = loss_ce(p_s, y_s)
    l_ssl = loss_focal_ssl(p_d, p_n, cfg.gamma)
    l_adv = loss_adv_gen(nets.disc_day(p_d), nets.disc_night(p_n))

    gen_loss = l_enhance + l_M + l_adv
    for weight, term, active in ((cfg.mu1, l_f2m, cfg.trans2seg), (cfg.mu2, l_m2f, cfg.seg2trans)):
        if active and weight != 0:
            gen_loss = gen_loss + weight * term
    gen_loss = gen_loss + cfg.mu3 * l_ssl

    opts.gen.zero_grad(set_to_none=True)
    gen_loss.backward()
    opts.gen.step()

    _requires_grad(discs, True)
    ps, pd, pn = p_s.detach(), p_d.detach(), p_n.detach()
    l_D = loss_disc(nets.disc_day(ps), nets.disc_night(ps), nets.disc_day(pd), nets.disc_night(pn))
    opts.disc.zero_grad(set_to_none=True)
    l_D.backward()
    opts.disc.step()

    report = StepReport(
        iter=it, lr=lr, l_enhance=l_enhance.item(), l_tv=l_tv.item(), l_exp=l_exp.item(),
        l_ssim=l_ssim.item(), l_M=l_M.item(), l_adv=l_adv.item(), l_D=l_D.item(),
        l_f2m=l_f2m.item(), l_m2f=l_m2f.item(), l_ssl=l_ssl.item(),
    )
    report.total = float(total_objective(report.to_dict(), cfg))
    return report


class BatchSchedule:
    """Deterministic batch indices as a pure function of the iteration.

    Each stream walks a fresh permutation per epoch; the shorter of the
    source and target sets simply cycles faster.
    """

    def __init__(self, n: int, batch_size: int, seed: int, name: str):
        if n <= 0:
            raise DataError(f"{name}: empty dataset")
        self.n, self.batch_size, self.seed, self.name = n, batch_size, seed, name
        self._cache: dict[int, np.ndarray] = {}

    def _perm(self, epoch):
        if epoch not in self._cache:
            if len(self._cache) > 4:
                self._cache.clear()
            self._cache[epoch] = substream(self.seed, self.name, epoch).permutation(self.n)
        return self._cache[epoch]

    def indices(self, it: int) -> list[int]:
        start = it * self.batch_size
        return [int(self._perm(p // self.n)[p % self.n]) for p in range(start, start + self.batch_size)]


def make_batch(data, src_idx, pair_idx) -> Batch:
    ids = [data.pair_ids[i] for i in pair_idx]
    return Batch(
        source=data.source_images[src_idx],
        source_labels=data.source_labels[src_idx],
        day=data.day_images[pair_idx],
        night=data.night_images[pair_idx],
        day_ids=ids,
        night_ids=list(ids),
    )


@dataclass
class Checkpoint:
    phase: str
    iteration: int
    config: dict
    config_digest: str
    arch_digest: str
    networks: dict[str, dict[str, torch.Tensor]]
    optimizers: dict[str, dict] = field(default_factory=dict)


def _clone_state(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def snapshot(phase: str, it: int, nets: Networks, cfg: Config, opts: dict | None = None) -> Checkpoint:
    opt_states = {}
    for name, opt in (opts or {}).items():
        st = opt.state_dict()
        opt_states[name] = {
            "state": {int(i): {k: (v.detach().clone() if torch.is_tensor(v) else v)
                               for k, v in s.items()} for i, s in st["state"].items()},
            "param_groups": [dict(g) for g in st["param_groups"]],
        }
    return Checkpoint(phase=phase, iteration=it, config=cfg.to_dict(), config_digest=cfg.digest(),
                      arch_digest=cfg.arch_digest(),
                      networks={k: _clone_state(m) for k, m in nets.modules().items()},
                      optimizers=opt_states)


def restore_networks(ckpt: Checkpoint, nets: Networks) -> None:
    from .exceptions import ShapeError

    for name, module in nets.modules().items():
        if name not in ckpt.networks:
            raise CheckpointError(f"checkpoint lacks network {name!r}")
        stored = ckpt.networks[name]
        own = module.state_dict()
        if set(stored) != set(own):
            raise ShapeError(f"{name}: parameter names differ from the checkpoint")
        for key, tensor in own.items():
            if tuple(stored[key].shape) != tuple(tensor.shape):
                raise ShapeError(f"{name}.{key}: checkpoint shape {tuple(stored[key].shape)} "
                                 f"!= network shape {tuple(tensor.shape)}")
        module.load_state_dict(stored)


def restore_optimizer(opt: torch.optim.Optimizer, state: dict) -> None:
    opt.load_state_dict({"state": state["state"], "param_groups": state["param_groups"]})


def pretrain(data, nets: Networks, cfg: Config, *, start: Checkpoint | None = None,
             on_step=None, stop_at: int | None = None) -> Checkpoint:
    """Source-only supervised training of the segmentation network."""
    if len(data.source_images) == 0:
        raise DataError("pretraining needs labeled source images")
    total = cfg.pretrain_iters
    opt = torch.optim.SGD(nets.seg.parameters(), lr=cfg.pretrain_lr, momentum=cfg.momentum,
                          weight_decay=cfg.weight_decay)
    it0 = 0
    if start is not None:
        restore_networks(start, nets)
        if start.phase == "pretrain" and "seg" in start.optimizers:
            restore_optimizer(opt, start.optimizers["seg"])
        it0 = start.iteration
    sched = BatchSchedule(len(data.source_images), cfg.batch_size, cfg.seed, "pretrain-order")
    end = total if stop_at is None else min(stop_at, total)
    for it in range(it0, end):
        idx = sched.indices(it)
        lr = poly_lr(it, cfg.pretrain_lr, total, cfg.lr_power)
        _set_lr(opt, lr)
        probs = torch.softmax(nets.seg(data.source_images[idx]), dim=1)
        loss = loss_ce(probs, data.source_labels[idx])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if on_step is not None:
            on_step({"iter": it, "lr": lr, "l_M": loss.item()})
    return snapshot("pretrain", max(end, it0), nets, cfg, {"seg": opt})


def adapt(data, ckpt: Checkpoint, cfg: Config, *, on_step=None, on_eval=None,
          stop_at: int | None = None, force: bool = False) -> tuple[Checkpoint, Networks]:
    """Domain-adaptation loop starting from a pretrain (or partial adapt) checkpoint.

    A pretrain checkpoint must share the network architecture; resuming an
    adapt checkpoint additionally requires the identical configuration.
    ``stop_at`` ends the run early (for interruption and resume).
    """
    if ckpt.phase == "adapt":
        if not force and ckpt.config_digest != cfg.digest():
            raise CheckpointError("config differs from the checkpoint being resumed")
    elif not force and ckpt.arch_digest != cfg.arch_digest():
        raise CheckpointError("checkpoint was trained with a different architecture")
    if len(data.day_images) == 0:
        raise DataError("adaptation needs day/night target pairs")

    nets = build_networks(cfg)
    restore_networks(ckpt, nets)
    opts = build_optimizers(nets, cfg)
    it0 = 0
    if ckpt.phase == "adapt":
        restore_optimizer(opts.gen, ckpt.optimizers["gen"])
        restore_optimizer(opts.disc, ckpt.optimizers["disc"])
        it0 = ckpt.iteration

    src_sched = BatchSchedule(len(data.source_images), cfg.batch_size, cfg.seed, "source-order")
    pair_sched = BatchSchedule(len(data.day_images), cfg.batch_size, cfg.seed, "pair-order")
    end = cfg.max_iters if stop_at is None else min(stop_at, cfg.max_iters)
    for it in range(it0, end):
        batch = make_batch(data, src_sched.indices(it), pair_sched.indices(it))
        report = train_step(batch, nets, opts, cfg, it)
        if on_step is not None:
            on_step(report.to_dict())
        if on_eval is not None and cfg.eval_every and (it + 1) % cfg.eval_every == 0:
            on_eval(it + 1, nets)
    return snapshot("adapt", end, nets, cfg, {"gen": opts.gen, "disc": opts.disc}), nets
