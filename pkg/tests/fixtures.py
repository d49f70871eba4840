"""Shared builders and independent oracles for the trainer tests."""
from __future__ import annotations

import numpy as np
import torch

from bimix.config import Config
from bimix.imgcore import SSIM_C1, SSIM_C2, gaussian_window
from bimix.rng import substream
from bimix.trainer import (Batch, build_networks, build_optimizers, seg2trans_loss,
                           train_step, trans2seg_loss)


def small_config(**kw) -> Config:
    """16x16 images, 4 classes and narrow networks: milliseconds per step."""
    base = dict(num_classes=4, dynamic_classes=(1, 2), image_size=16, pool_k=8,
                relight_widths=(4, 4), seg_widths=(4, 4, 4, 4), disc_widths=(4, 4, 4),
                base_lr=2e-2, disc_lr=1e-3, max_iters=50, pretrain_iters=20, eval_every=0)
    base.update(kw)
    return Config(**base)


def random_batch(seed: int, cfg: Config, b: int = 1) -> Batch:
    g = torch.Generator().manual_seed(seed)
    s = cfg.image_size
    imgs = torch.rand(3, b, 3, s, s, generator=g)
    y = torch.randint(0, cfg.num_classes, (b, s, s), generator=g)
    ids = [f"{seed}-{i}" for i in range(b)]
    return Batch(source=imgs[0], source_labels=y, day=imgs[1], night=imgs[2],
                 day_ids=ids, night_ids=list(ids))


def randomize(nets, seed: int, scale: float = 0.3) -> None:
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in nets.modules().values():
            for p in m.parameters():
                p.copy_(torch.randn(p.shape, generator=g) * scale)


def isolation_case(seed: int) -> None:
    """One randomized train_step with every gradient-isolation assertion."""
    rng = np.random.default_rng(seed)
    cfg = small_config(seed=seed, mu1=float(rng.uniform(0.1, 1)), mu2=float(rng.uniform(0.1, 1)))
    nets = build_networks(cfg)
    randomize(nets, seed)
    opts = build_optimizers(nets, cfg)
    batch = random_batch(seed, cfg)
    gen_p, disc_p = nets.generator_parameters(), nets.discriminator_parameters()
    seen = {}

    gen_step, disc_step = opts.gen.step, opts.disc.step

    def checked_gen_step(*a, **k):
        before = [p.detach().clone() for p in disc_p]
        assert all(p.grad is None for p in disc_p), "generator loss reached the discriminators"
        out = gen_step(*a, **k)
        assert all(torch.equal(x, p) for x, p in zip(before, disc_p)), "generator step moved D"
        seen["gen_grads"] = [None if p.grad is None else p.grad.clone() for p in gen_p]
        return out

    def checked_disc_step(*a, **k):
        before = [p.detach().clone() for p in gen_p]
        for g0, p in zip(seen["gen_grads"], gen_p):
            assert (g0 is None and p.grad is None) or torch.equal(g0, p.grad), "L_D reached F or M"
        out = disc_step(*a, **k)
        assert all(torch.equal(x, p) for x, p in zip(before, gen_p)), "discriminator step moved F/M"
        seen["disc"] = True
        return out

    opts.gen.step, opts.disc.step = checked_gen_step, checked_disc_step
    train_step(batch, nets, opts, cfg, 0)
    assert seen.get("disc")

    # Trans2Seg: no gradient into the night pass that made the pseudo-labels
    raw_n = batch.night
    p_n = torch.softmax(nets.seg(raw_n + nets.relight(raw_n)), dim=1)
    l_f2m = trans2seg_loss(nets, batch.source, batch.source_labels, raw_n, p_n, substream(seed, "classes", 0))
    (g_pn,) = torch.autograd.grad(l_f2m, [p_n], allow_unused=True)
    assert g_pn is None, "mixed CE reached the night prediction"

    # Seg2Trans: no gradient into M
    p_d = torch.softmax(nets.seg(batch.day + nets.relight(batch.day)), dim=1)
    res_d = nets.relight(batch.day)
    l_m2f = seg2trans_loss(nets, batch.day, batch.night, p_d, res_d, cfg.dynamic_classes)
    grads = torch.autograd.grad(l_m2f, list(nets.seg.parameters()) + [p_d], allow_unused=True)
    assert all(g is None for g in grads), "consistency loss reached the segmentation network"


# ---- straight-line recomputation of one training step (float64 numpy) ----

def _conv(x, w, b, stride=1, pad=1):
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh, ow = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((o, oh, ow))
    for k in range(o):
        for i in range(oh):
            for j in range(ow):
                win = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[k, i, j] = b[k] + (w[k] * win).sum()
    return out


def _softmax(z):
    e = np.exp(z - z.max(0, keepdims=True))
    return e / e.sum(0, keepdims=True)


def _ssim(a, b):
    g = gaussian_window().numpy()
    w2 = np.outer(g, g)
    out = np.zeros_like(a)
    pa = np.pad(a, ((0, 0), (5, 5), (5, 5)), mode="reflect")
    pb = np.pad(b, ((0, 0), (5, 5), (5, 5)), mode="reflect")
    for c in range(a.shape[0]):
        for i in range(a.shape[1]):
            for j in range(a.shape[2]):
                wa, wb = pa[c, i:i + 11, j:j + 11], pb[c, i:i + 11, j:j + 11]
                ma, mb = (w2 * wa).sum(), (w2 * wb).sum()
                va, vb = (w2 * (wa - ma) ** 2).sum(), (w2 * (wb - mb) ** 2).sum()
                cov = (w2 * (wa - ma) * (wb - mb)).sum()
                out[c, i, j] = ((2 * ma * mb + SSIM_C1) * (2 * cov + SSIM_C2)
                                / ((ma ** 2 + mb ** 2 + SSIM_C1) * (va + vb + SSIM_C2)))
    return out


def _ce(p, y):
    c = p.shape[0]
    total = 0.0
    for i in range(y.shape[0]):
        for j in range(y.shape[1]):
            if y[i, j] != 255:
                total -= np.log(p[y[i, j], i, j])
    return total / (y.size * c)


def oracle_step(params: dict, src, y_s, day, night, cfg: Config, it: int) -> dict:
    """Every loss of one step from raw arrays and weights, without the package's losses."""
    rw, rb = params["relight"]
    sw, sb = params["seg"]
    (dw, db), (nw, nb) = params["disc_day"], params["disc_night"]

    def relight(x):
        return _conv(x, rw, rb)

    def seg(x):
        return _softmax(np.einsum("kc,chw->khw", sw, x) + sb[:, None, None])

    def disc(p, w, b):
        return _conv(p, w, b, stride=2, pad=1)

    k = cfg.pool_k
    tv, ex, ss = [], [], []
    probs = []
    for x in (src, day, night):
        r = relight(x)
        d = x - r
        gx = np.zeros_like(d)
        gy = np.zeros_like(d)
        gx[:, :, :-1] = d[:, :, 1:] - d[:, :, :-1]
        gy[:, :-1, :] = d[:, 1:, :] - d[:, :-1, :]
        tv.append(np.mean(np.abs(gx ** 2 + gy ** 2)))
        en = x + r
        blocks = np.zeros_like(r)
        for i in range(0, r.shape[1], k):
            for j in range(0, r.shape[2], k):
                blocks[:, i:i + k, j:j + k] = r[:, i:i + k, j:j + k].mean(axis=(1, 2), keepdims=True)
        ex.append(np.mean(np.abs(blocks - en)))
        ss.append(np.mean(np.abs(1 - _ssim(x, r))) / 2)
        probs.append(seg(en))
    p_s, p_d, p_n = probs
    out = {"l_tv": np.mean(tv), "l_exp": np.mean(ex), "l_ssim": np.mean(ss)}
    out["l_enhance"] = cfg.alpha_tv * out["l_tv"] + cfg.alpha_exp * out["l_exp"] + cfg.alpha_ssim * out["l_ssim"]
    out["l_M"] = _ce(p_s, y_s)

    rng = substream(cfg.seed, "classes", it)
    present = sorted(int(c) for c in np.unique(y_s) if c != 255)
    chosen = rng.choice(np.asarray(present), size=(len(present) + 1) // 2, replace=False)
    m = np.isin(y_s, chosen)
    mixed = np.where(m[None], src, night)
    p_m = seg(mixed + relight(mixed))
    y_m = np.where(m, y_s, p_n.argmax(0))
    out["l_f2m"] = _ce(p_m, y_m)

    dyn = np.isin(p_d.argmax(0), cfg.dynamic_classes)
    mixed = np.where(dyn[None], day, night)
    out["l_m2f"] = np.mean(np.abs(relight(mixed) - relight(day)))

    cls = p_d.argmax(0)
    pd_max = p_d.max(0)
    pn_sel = np.take_along_axis(p_n, cls[None], 0)[0]
    out["l_ssl"] = np.mean((1 - pd_max) ** cfg.gamma * -np.log(pn_sel))

    out["l_adv"] = np.mean((disc(p_d, dw, db) - 1) ** 2) + np.mean((disc(p_n, nw, nb) - 1) ** 2)
    out["l_D"] = (np.mean((disc(p_s, dw, db) - 1) ** 2) + np.mean((disc(p_s, nw, nb) - 1) ** 2)
                  + np.mean(disc(p_d, dw, db) ** 2) + np.mean(disc(p_n, nw, nb) ** 2))
    out["total"] = (out["l_enhance"] + out["l_M"] + out["l_D"] + out["l_adv"] + cfg.mu1 * out["l_f2m"]
                    + cfg.mu2 * out["l_m2f"] + cfg.mu3 * out["l_ssl"])
    out["lr"] = cfg.base_lr * (1 - it / cfg.max_iters) ** cfg.lr_power
    return out
