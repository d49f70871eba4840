import pytest

from bimix.config import DESK, Config, dump_config, load_config, parse_overrides


def test_defaults():
    c = Config()
    assert (c.mu1, c.mu2, c.mu3) == (0.001, 0.001, 1.0)
    assert c.alphas == (10.0, 1.0, 1.0)
    assert c.gamma == 1.0 and c.pool_k == 32 and c.base_lr == 2.5e-4
    assert c.momentum == 0.9 and c.weight_decay == 5e-4 and c.adam_betas == (0.9, 0.99)
    assert c.batch_size == 2 and c.num_classes == 8 and c.dynamic_classes == (4, 5)


@pytest.mark.parametrize("mode,t2s,s2t", [("baseline", False, False), ("m2f", False, True),
                                         ("f2m", True, False), ("bimix", True, True)])
def test_mode_flags(mode, t2s, s2t):
    c = Config(mode=mode)
    assert (c.trans2seg, c.seg2trans) == (t2s, s2t)


@pytest.mark.parametrize("bad", [{"mode": "both"}, {"mu1": -1.0}, {"max_iters": 0}, {"gamma": -0.5}])
def test_validation(bad):
    with pytest.raises(ValueError):
        Config(**bad)


def test_file_roundtrip(tmp_path):
    c = DESK.replace(mode="m2f", seg_widths=(8, 8), relight_enabled=False, mu3=0.5)
    dump_config(c, tmp_path / "c.txt")
    assert load_config(tmp_path / "c.txt") == c


def test_file_comments_and_errors(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# desk run\nmu1 = 0.01  # stronger\n\nmode = f2m\n")
    c = load_config(p)
    assert c.mu1 == 0.01 and c.mode == "f2m" and c.base_lr == DESK.base_lr
    p.write_text("nonsense = 1\n")
    with pytest.raises(KeyError):
        load_config(p)
    p.write_text("mu1 0.1\n")
    with pytest.raises(ValueError):
        load_config(p)


def test_overrides_and_digest():
    c = parse_overrides({"relight-enabled": "false", "seed": "4"}, DESK)
    assert c.relight_enabled is False and c.seed == 4
    assert c.digest() != DESK.digest()
    assert c.arch_digest() == DESK.arch_digest()
    assert DESK.replace(num_classes=5).arch_digest() != DESK.arch_digest()
    assert Config.from_dict(c.to_dict()) == c
