import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bimix.checkpoint import load_checkpoint, save_checkpoint
from bimix.config import Config
from bimix.exceptions import CheckpointError, DataError, PairingError
from bimix.trainer import (BatchSchedule, StepReport, adapt, build_networks, build_optimizers,
                           poly_lr, pretrain, snapshot, total_objective, train_step)
from fixtures import isolation_case, oracle_step, random_batch, randomize, small_config

COMPONENTS = ("l_enhance", "l_M", "l_D", "l_adv", "l_f2m", "l_m2f", "l_ssl")


def test_poly_lr_values():
    assert poly_lr(0, 2.5e-4, 1000) == 2.5e-4
    assert poly_lr(1000, 2.5e-4, 1000) == 0
    assert poly_lr(500, 2.5e-4, 1000) == pytest.approx(1.3397e-4, rel=1e-4)
    assert poly_lr(500, 2.5e-4, 1000) == pytest.approx(2.5e-4 * 0.5 ** 0.9)
    with pytest.raises(ValueError):
        poly_lr(1001, 2.5e-4, 1000)


def test_poly_lr_monotone():
    lrs = [poly_lr(i, 1.0, 300) for i in range(301)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_total_objective():
    cfg = Config()
    assert total_objective({k: 0.0 for k in COMPONENTS}, cfg) == 0
    assert total_objective({k: 1.0 for k in COMPONENTS}, cfg) == pytest.approx(5.002)
    assert total_objective({k: 1.0 for k in COMPONENTS}, cfg.replace(mode="baseline")) == pytest.approx(5.0)
    assert total_objective({k: 1.0 for k in COMPONENTS}, cfg.replace(mode="m2f")) == pytest.approx(5.001)


def test_step_matches_straight_line_oracle():
    cfg = Config(num_classes=3, dynamic_classes=(1,), image_size=4, pool_k=2, batch_size=1,
                 relight_widths=(), seg_widths=(), disc_widths=(), max_iters=10, base_lr=0.01,
                 seed=3, mu1=0.5, mu2=0.5)
    nets = build_networks(cfg)
    rng = np.random.default_rng(11)
    with torch.no_grad():
        nets.relight.decoder[0].weight.copy_(torch.from_numpy(rng.normal(0, 0.1, (3, 3, 3, 3))))
        nets.relight.decoder[0].bias.copy_(torch.from_numpy(rng.normal(0, 0.05, 3)))
        nets.seg.classifier.weight.copy_(torch.from_numpy(rng.normal(0, 2.0, (3, 3, 1, 1))))
        nets.seg.classifier.bias.copy_(torch.from_numpy(rng.normal(0, 0.5, 3)))
        for d in (nets.disc_day, nets.disc_night):
            d.net[0].weight.copy_(torch.from_numpy(rng.normal(0, 0.3, (1, 3, 4, 4))))
            d.net[0].bias.copy_(torch.from_numpy(rng.normal(0, 0.1, 1)))
    params = {name: tuple(p.detach().double().numpy().copy() for p in m.parameters())
              for name, m in nets.modules().items()}
    params["seg"] = (params["seg"][0][:, :, 0, 0], params["seg"][1])
    params["disc_day"] = (params["disc_day"][0], params["disc_day"][1])

    imgs = rng.random((3, 3, 4, 4)).astype(np.float32)
    y_s = np.array([[0, 0, 1, 2], [0, 1, 1, 2], [2, 2, 0, 0], [1, 255, 0, 2]])
    batch = random_batch(0, cfg)
    batch.source, batch.day, batch.night = (torch.from_numpy(imgs[i][None]) for i in range(3))
    batch.source_labels = torch.from_numpy(y_s[None])

    expect = oracle_step(params, *(imgs[0].astype(np.float64), y_s, imgs[1].astype(np.float64),
                                   imgs[2].astype(np.float64)), cfg, it=2)
    assert expect["l_m2f"] > 0 and expect["l_f2m"] > 0
    rep = train_step(batch, nets, build_optimizers(nets, cfg), cfg, 2).to_dict()
    for key, val in expect.items():
        assert rep[key] == pytest.approx(val, rel=1e-4, abs=1e-7), key


def test_report_total_is_weighted_sum():
    cfg = small_config(mu1=0.3, mu2=0.7, mu3=0.5)
    nets = build_networks(cfg)
    randomize(nets, 1)
    opts = build_optimizers(nets, cfg)
    for it in range(3):
        rep = train_step(random_batch(it, cfg), nets, opts, cfg, it)
        recomb = (rep.l_enhance + rep.l_M + rep.l_D + rep.l_adv + 0.3 * rep.l_f2m
                  + 0.7 * rep.l_m2f + 0.5 * rep.l_ssl)
        assert abs(rep.total - recomb) <= 1e-6
        assert rep.l_enhance == pytest.approx(10 * rep.l_tv + rep.l_exp + rep.l_ssim, rel=1e-6)


def test_baseline_reports_no_branch_terms():
    cfg = small_config(mode="baseline")
    nets = build_networks(cfg)
    randomize(nets, 2)
    rep = train_step(random_batch(0, cfg), nets, build_optimizers(nets, cfg), cfg, 0)
    assert rep.l_f2m == 0 and rep.l_m2f == 0


def _params(nets):
    return [p.detach().clone() for m in nets.modules().values() for p in m.parameters()]


def _run_steps(cfg, n=3, seed=5):
    nets = build_networks(cfg)
    randomize(nets, seed)
    opts = build_optimizers(nets, cfg)
    reports = [train_step(random_batch(it, cfg), nets, opts, cfg, it) for it in range(n)]
    return reports, _params(nets)


def test_ablation_nesting():
    base_reports, base = _run_steps(small_config(mode="baseline"))
    _, zero = _run_steps(small_config(mode="bimix", mu1=0.0, mu2=0.0))
    assert all(torch.equal(a, b) for a, b in zip(base, zero))
    _, active = _run_steps(small_config(mode="bimix", mu1=0.5, mu2=0.5))
    assert not all(torch.equal(a, b) for a, b in zip(base, active))


def test_step_determinism():
    cfg = small_config()
    a, pa = _run_steps(cfg)
    b, pb = _run_steps(cfg)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    assert all(torch.equal(x, y) for x, y in zip(pa, pb))


def test_no_relight_bypass():
    cfg = small_config(relight_enabled=False)
    nets = build_networks(cfg)
    randomize(nets, 4)
    before = [p.detach().clone() for p in nets.relight.parameters()]
    rep = train_step(random_batch(0, cfg), nets, build_optimizers(nets, cfg), cfg, 0)
    assert rep.l_enhance == rep.l_tv == rep.l_exp == rep.l_ssim == rep.l_m2f == 0
    assert all(torch.equal(a, p) for a, p in zip(before, nets.relight.parameters()))


def test_pairing_error():
    cfg = small_config()
    nets = build_networks(cfg)
    batch = random_batch(0, cfg)
    batch.night_ids = ["other"]
    with pytest.raises(PairingError):
        train_step(batch, nets, build_optimizers(nets, cfg), cfg, 0)
    batch = random_batch(0, cfg)
    batch.night = batch.night[..., :8]
    with pytest.raises(PairingError):
        train_step(batch, nets, build_optimizers(nets, cfg), cfg, 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_isolation(seed):
    isolation_case(seed)


def test_batch_schedule():
    s = BatchSchedule(5, 2, 0, "x")
    seen = [i for it in range(5) for i in s.indices(it)]
    # two epochs of five, each a permutation
    assert sorted(seen[:5]) == list(range(5)) and sorted(seen[5:]) == list(range(5))
    assert BatchSchedule(5, 2, 0, "x").indices(3) == s.indices(3)
    with pytest.raises(DataError):
        BatchSchedule(0, 2, 0, "x")


def test_pretrain_zero_iterations_is_init(tiny_data, tiny_cfg):
    cfg = tiny_cfg.replace(pretrain_iters=0)
    nets = build_networks(cfg)
    init = snapshot("pretrain", 0, build_networks(cfg), cfg)
    ck = pretrain(tiny_data, nets, cfg)
    assert ck.iteration == 0
    for name, state in init.networks.items():
        for k, v in state.items():
            assert torch.equal(v, ck.networks[name][k])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_pretrain_reduces_loss(tiny_data, tiny_cfg, seed):
    cfg = tiny_cfg.replace(pretrain_iters=200, seed=seed)
    losses = []
    pretrain(tiny_data, build_networks(cfg), cfg, on_step=lambda d: losses.append(d["l_M"]))
    assert len(losses) == 200
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_pretrain_deterministic(tiny_data, tiny_cfg):
    a = pretrain(tiny_data, build_networks(tiny_cfg), tiny_cfg)
    b = pretrain(tiny_data, build_networks(tiny_cfg), tiny_cfg)
    for name in a.networks:
        for k in a.networks[name]:
            assert torch.equal(a.networks[name][k], b.networks[name][k])


def test_pretrain_requires_data(tiny_data, tiny_cfg):
    from dataclasses import replace
    empty = replace(tiny_data, source_images=tiny_data.source_images[:0])
    with pytest.raises(DataError):
        pretrain(empty, build_networks(tiny_cfg), tiny_cfg)


def test_adapt_resume_identical(tiny_data, tiny_cfg, tmp_path):
    pre = pretrain(tiny_data, build_networks(tiny_cfg), tiny_cfg)
    straight = []
    full, nets_a = adapt(tiny_data, pre, tiny_cfg, on_step=straight.append)

    first = []
    half, _ = adapt(tiny_data, pre, tiny_cfg, on_step=first.append, stop_at=5)
    save_checkpoint(half, tmp_path / "half")
    second = []
    done, nets_b = adapt(tiny_data, load_checkpoint(tmp_path / "half"), tiny_cfg, on_step=second.append)
    assert first + second == straight
    assert done.iteration == full.iteration == tiny_cfg.max_iters
    for name in full.networks:
        for k in full.networks[name]:
            assert torch.equal(full.networks[name][k], done.networks[name][k])


def test_adapt_config_checks(tiny_data, tiny_cfg):
    pre = pretrain(tiny_data, build_networks(tiny_cfg), tiny_cfg)
    with pytest.raises(CheckpointError):
        adapt(tiny_data, pre, tiny_cfg.replace(seg_widths=(4, 4, 4, 4)))
    half, _ = adapt(tiny_data, pre, tiny_cfg, stop_at=2)
    with pytest.raises(CheckpointError):
        adapt(tiny_data, half, tiny_cfg.replace(mu1=0.5))
    ck, _ = adapt(tiny_data, half, tiny_cfg.replace(mu1=0.5), force=True, stop_at=3)
    assert ck.iteration == 3
