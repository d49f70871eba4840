"""Central finite-difference checks of every training loss at 64-bit precision.

Each check builds a small random instance, exposes the loss as a function of
a flat parameter vector and compares the autograd gradient with central
differences along the normalised gradient, a random direction and a few
random coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
from torch.func import functional_call

from .adversarial import Discriminator, loss_adv_gen, loss_disc
from .enhancement import RelightNet, loss_consistency, loss_exposure, loss_ssim, loss_tv
from .imgcore import IGNORE_ID
from .mixing import mix_images, mix_labels
from .segmentation import loss_ce, loss_focal_ssl, loss_mixed_ce

STEP = 1e-5
TOLERANCE = 1e-3
DTYPE = torch.float64


@dataclass
class CheckResult:
    name: str
    seed: int
    rel_err: float
    passed: bool


def _relight_net(g):
    net = RelightNet((4, 8, 8)).to(DTYPE)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=DTYPE) * 0.3)
    return net


def _disc(c, g):
    d = Discriminator(c, (4, 4, 4)).to(DTYPE)
    with torch.no_grad():
        for p in d.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=DTYPE) * 0.3)
    return d


def _unflatten(nets, theta):
    """Split ``theta`` into per-network parameter dicts, in ``named_parameters`` order."""
    out, pos = [], 0
    for net in nets:
        d = {}
        for name, p in net.named_parameters():
            d[name] = theta[pos:pos + p.numel()].view_as(p)
            pos += p.numel()
        out.append(d)
    return out


def _flat(*nets):
    return torch.cat([p.detach().flatten() for n in nets for p in n.parameters()])


def _net_objective(net, loss_of_call):
    """Wrap ``loss_of_call(call)`` as a function of the flat parameters of ``net``,
    where ``call(x)`` runs ``net`` with those parameters."""

    def fn(theta):
        (params,) = _unflatten([net], theta)
        return loss_of_call(lambda x: functional_call(net, params, (x,)))

    return fn, _flat(net)


def _image(g, h=16, w=16):
    return torch.rand(1, 3, h, w, generator=g, dtype=DTYPE)


def check_tv(g):
    net, img = _relight_net(g), _image(g)
    return _net_objective(net, lambda f: loss_tv(img, f(img)))


def check_exposure(g):
    net, img = _relight_net(g), _image(g)

    def loss(f):
        r = f(img)
        return loss_exposure(r, r + img, 8)

    return _net_objective(net, loss)


def check_ssim(g):
    net, img = _relight_net(g), _image(g)
    return _net_objective(net, lambda f: loss_ssim(img, f(img)))


def check_consistency(g):
    net, day, night = _relight_net(g), _image(g), _image(g)
    m = (torch.rand(1, 16, 16, generator=g) < 0.3).to(torch.uint8)
    with torch.no_grad():
        target = net(day)
    mixed = mix_images(day, night, m)
    return _net_objective(net, lambda f: loss_consistency(f(mixed), target))


def _labels(g, c, h=8, w=8, ignore_frac=0.1):
    y = torch.randint(0, c, (1, h, w), generator=g)
    ignore = torch.rand(1, h, w, generator=g) < ignore_frac
    return torch.where(ignore, torch.full_like(y, IGNORE_ID), y)


def _logits(g, c=4, h=8, w=8):
    return torch.randn(1, c, h, w, generator=g, dtype=DTYPE)


def check_ce(g):
    z, y = _logits(g), _labels(g, 4)
    return (lambda t: loss_ce(torch.softmax(t.view_as(z), 1), y)), z.flatten()


def check_mixed_ce(g):
    z, y_s = _logits(g), _labels(g, 4)
    p_n = torch.softmax(_logits(g), 1)
    m = (torch.rand(1, 8, 8, generator=g) < 0.5).to(torch.uint8)
    y_m = mix_labels(y_s, p_n, m & (y_s != IGNORE_ID).to(torch.uint8))
    return (lambda t: loss_mixed_ce(torch.softmax(t.view_as(z), 1), y_m)), z.flatten()


def check_focal(g):
    p_d = torch.softmax(_logits(g) * 2, 1)
    z = _logits(g)
    return (lambda t: loss_focal_ssl(p_d, torch.softmax(t.view_as(z), 1), 1.0)), z.flatten()


def check_adv(g):
    c = 4
    dd, dn = _disc(c, g), _disc(c, g)
    z = torch.randn(2, c, 32, 32, generator=g, dtype=DTYPE)

    def fn(t):
        p = torch.softmax(t.view_as(z), 1)
        return loss_adv_gen(dd(p[:1]), dn(p[1:]))

    return fn, z.flatten()


def check_disc(g):
    c = 4
    dd, dn = _disc(c, g), _disc(c, g)
    p = torch.softmax(torch.randn(3, c, 32, 32, generator=g, dtype=DTYPE), 1)
    ps, pd, pn = p[:1], p[1:2], p[2:]

    def fn(t):
        a, b = _unflatten([dd, dn], t)
        fd = lambda x: functional_call(dd, a, (x,))
        fn_ = lambda x: functional_call(dn, b, (x,))
        return loss_disc(fd(ps), fn_(ps), fd(pd), fn_(pn))

    return fn, _flat(dd, dn)


# name -> (equation label, instance builder)
CHECKS: dict[str, tuple[str, Callable]] = {
    "mixed_ce": ("Trans2Seg mixed cross-entropy", check_mixed_ce),
    "focal": ("focal self-training loss", check_focal),
    "tv": ("total variation loss", check_tv),
    "exp": ("exposure loss", check_exposure),
    "ssim": ("SSIM loss", check_ssim),
    "consistency": ("Seg2Trans consistency loss", check_consistency),
    "ce": ("source cross-entropy", check_ce),
    "adv": ("generator adversarial loss", check_adv),
    "disc": ("discriminator loss", check_disc),
}


def relative_error(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def directional_errors(fn, theta: torch.Tensor, g: torch.Generator, h: float = STEP,
                       n_coords: int = 3) -> list[float]:
    theta = theta.detach().clone().requires_grad_(True)
    loss = fn(theta)
    (grad,) = torch.autograd.grad(loss, theta)
    grad = grad.detach()
    theta = theta.detach()
    dirs = []
    if grad.norm() > 0:
        dirs.append(grad / grad.norm())
    r = torch.randn(theta.shape, generator=g, dtype=theta.dtype)
    dirs.append(r / r.norm())
    # coordinates with non-negligible gradient, so the ratio is meaningful
    big = torch.nonzero(grad.abs() > 1e-3 * grad.abs().max()).flatten()
    if len(big):
        pick = big[torch.randperm(len(big), generator=g)[:n_coords]]
        for i in pick:
            e = torch.zeros_like(theta)
            e[i] = 1.0
            dirs.append(e)
    errs = []
    with torch.no_grad():
        for u in dirs:
            numeric = (fn(theta + h * u) - fn(theta - h * u)).item() / (2 * h)
            errs.append(relative_error(float(grad @ u), numeric))
    return errs


def run_check(name: str, seed: int, builder: Callable | None = None) -> CheckResult:
    builder = builder or CHECKS[name][1]
    g = torch.Generator().manual_seed(seed)
    fn, theta = builder(g)
    err = max(directional_errors(fn, theta, g))
    return CheckResult(name=name, seed=seed, rel_err=err, passed=err <= TOLERANCE)


def run_all(names=None, seeds=range(5), checks: dict | None = None) -> list[CheckResult]:
    checks = checks or CHECKS
    names = list(names) if names else list(checks)
    unknown = [n for n in names if n not in checks]
    if unknown:
        raise KeyError(f"unknown loss(es): {', '.join(unknown)}")
    return [run_check(n, s, checks[n][1]) for n in names for s in seeds]


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'loss':<12} {'seed':>4} {'rel_err':>10}  status"]
    for r in results:
        lines.append(f"{r.name:<12} {r.seed:>4} {r.rel_err:>10.2e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
