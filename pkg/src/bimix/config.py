"""Run configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

MODES = ("baseline", "m2f", "f2m", "bimix")

# fields that fix network shapes; checkpoints must agree on these to be loadable
ARCH_FIELDS = ("num_classes", "image_size", "relight_widths", "seg_widths", "disc_widths")


@dataclass(frozen=True)
class Config:
    mu1: float = 0.001
    mu2: float = 0.001
    mu3: float = 1.0
    alpha_tv: float = 10.0
    alpha_exp: float = 1.0
    alpha_ssim: float = 1.0
    gamma: float = 1.0
    pool_k: int = 32
    base_lr: float = 2.5e-4
    pretrain_lr: float = 2.5e-4
    disc_lr: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    adam_betas: tuple[float, float] = (0.9, 0.99)
    lr_power: float = 0.9
    batch_size: int = 2
    max_iters: int = 3000
    pretrain_iters: int = 1500
    mode: str = "bimix"
    relight_enabled: bool = True
    seed: int = 0
    image_size: int = 96
    num_classes: int = 8
    dynamic_classes: tuple[int, ...] = (4, 5)
    relight_widths: tuple[int, ...] = (16, 32, 64)
    seg_widths: tuple[int, ...] = (16, 32, 32, 32)
    disc_widths: tuple[int, ...] = (16, 32, 32)
    eval_every: int = 500

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("mu1", "mu2", "mu3", "alpha_tv", "alpha_exp", "alpha_ssim", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.pretrain_iters < 0:
            raise ValueError("pretrain_iters must be non-negative")

    @property
    def alphas(self) -> tuple[float, float, float]:
        return (self.alpha_tv, self.alpha_exp, self.alpha_ssim)

    @property
    def trans2seg(self) -> bool:
        return self.mode in ("f2m", "bimix")

    @property
    def seg2trans(self) -> bool:
        return self.mode in ("m2f", "bimix")

    def replace(self, **changes) -> "Config":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        """Inverse of :meth:`to_dict`, tolerant of JSON lists in place of tuples."""
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def digest(self, keys=None) -> str:
        d = self.to_dict()
        if keys is not None:
            d = {k: d[k] for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def arch_digest(self) -> str:
        return self.digest(ARCH_FIELDS)


# desk-scale benchmark settings: the segmenter is pretrained from scratch,
# which needs a far larger step than the adaptation phase
DESK = Config(pretrain_lr=0.2, base_lr=2e-2, disc_lr=1e-5)


def _parse_value(template, text: str):
    text = text.strip()
    if isinstance(template, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(template, tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        kind = type(template[0]) if template else int
        return tuple(kind(p) for p in parts)
    return type(template)(text)


def parse_overrides(pairs: dict[str, str], base: Config) -> Config:
    known = {f.name for f in fields(Config)}
    changes = {}
    for key, text in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in known:
            raise KeyError(f"unknown config key {key!r}")
        changes[key] = _parse_value(getattr(base, key), text)
    return base.replace(**changes)


def load_config(path, base: Config = DESK) -> Config:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value
    return parse_overrides(pairs, base)


def dump_config(cfg: Config, path) -> None:
    lines = []
    for f in fields(Config):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")
