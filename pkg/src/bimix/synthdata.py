"""Procedural street scenes: labeled source images and coarsely aligned day/night pairs.

Source images use palette A. Target day images use a hue-shifted palette B,
and each night image is its day rendering darkened, tinted blue, re-noised,
stripped of some dynamic objects and shifted by a few pixels.
"""
from __future__ import annotations

import colorsys
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .exceptions import DataError, OverwriteError
from .imgcore import IGNORE_ID
from .rng import substream

GENERATOR_VERSION = "1"

CLASS_NAMES = ("road", "sky", "building", "vegetation", "car", "person", "pole", "sign")
ROAD, SKY, BUILDING, VEGETATION, CAR, PERSON, POLE, SIGN = range(8)
NUM_CLASSES = len(CLASS_NAMES)
DYNAMIC_CLASSES = frozenset({CAR, PERSON})

PALETTE_A = {
    ROAD: (0.45, 0.43, 0.45),
    SKY: (0.55, 0.75, 0.95),
    BUILDING: (0.62, 0.40, 0.30),
    VEGETATION: (0.25, 0.55, 0.20),
    CAR: (0.75, 0.15, 0.15),
    PERSON: (0.90, 0.70, 0.35),
    POLE: (0.20, 0.20, 0.25),
    SIGN: (0.95, 0.85, 0.10),
}

# colours used when writing prediction PNGs
LABEL_PALETTE = {
    ROAD: (128, 64, 128),
    SKY: (70, 130, 180),
    BUILDING: (70, 70, 70),
    VEGETATION: (107, 142, 35),
    CAR: (0, 0, 142),
    PERSON: (220, 20, 60),
    POLE: (153, 153, 153),
    SIGN: (220, 220, 0),
}


def _hue_shift(rgb, shift=0.06, value_scale=0.95):
    h, s, v = colorsys.rgb_to_hsv(*rgb)
    return colorsys.hsv_to_rgb((h + shift) % 1.0, s, min(1.0, v * value_scale))


PALETTE_B = {c: _hue_shift(rgb) for c, rgb in PALETTE_A.items()}


@dataclass
class Instance:
    cls: int
    box: tuple[int, int, int, int]  # y0, x0, y1, x1 (exclusive)
    jitter: tuple[float, float, float]
    ellipse: bool = False


@dataclass
class SceneSpec:
    height: int
    width: int
    sky_rows: int
    road_rows: int
    band_jitter: dict[int, tuple[float, float, float]]
    instances: list[Instance] = field(default_factory=list)
    seed: int = 0

    @property
    def road_top(self) -> int:
        return self.height - self.road_rows


@dataclass
class NightParams:
    gain: float = 0.25
    gamma: float = 2.2
    blue_cast: float = 0.03
    noise: float = 0.05
    removal_prob: float = 0.7
    max_shift: int = 4


DAY_NOISE = 0.02
# object sizes are in pixels; smaller canvases cannot hold them
MIN_SIZE = 64


def _jitter(rng, amount=0.08):
    return tuple(float(v) for v in rng.uniform(-amount, amount, size=3))


def sample_scene(rng: np.random.Generator, height: int = 96, width: int = 96) -> SceneSpec:
    sky = int(round(height * rng.uniform(0.25, 0.40)))
    road = int(round(height * rng.uniform(0.30, 0.45)))
    spec = SceneSpec(
        height=height, width=width, sky_rows=sky, road_rows=road,
        band_jitter={c: _jitter(rng, 0.05) for c in (SKY, BUILDING, ROAD)},
        seed=int(rng.integers(0, 2**31 - 1)),
    )
    top = spec.road_top
    objs = spec.instances

    for _ in range(rng.integers(2, 6)):
        w = int(rng.integers(width // 8, width // 3))
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(max(1, sky // 3), max(2, top - 4)))
        objs.append(Instance(BUILDING, (y0, x0, top, x0 + w), _jitter(rng)))

    for _ in range(rng.integers(1, 4)):
        ry = int(rng.integers(4, 10))
        rx = int(rng.integers(5, 14))
        cy = int(rng.integers(sky, top))
        cx = int(rng.integers(0, width))
        box = (max(0, cy - ry), max(0, cx - rx), min(top, cy + ry), min(width, cx + rx))
        objs.append(Instance(VEGETATION, box, _jitter(rng), ellipse=True))

    for _ in range(rng.integers(0, 4)):
        x0 = int(rng.integers(0, width - 3))
        w = int(rng.integers(2, 4))
        y0 = int(rng.integers(max(0, sky - 12), max(1, sky + 4)))
        y1 = min(height, top + int(rng.integers(1, 5)))
        objs.append(Instance(POLE, (y0, x0, y1, x0 + w), _jitter(rng, 0.04)))

    for _ in range(rng.integers(0, 3)):
        w = int(rng.integers(6, 11))
        h = int(rng.integers(5, 9))
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(max(0, sky - 8), max(1, top - h)))
        objs.append(Instance(SIGN, (y0, x0, y0 + h, x0 + w), _jitter(rng, 0.05)))

    movers = []
    for _ in range(rng.integers(0, 4)):
        h = int(rng.integers(8, 15))
        w = int(rng.integers(14, 29))
        y1 = int(rng.integers(top + h, height + 1))
        x0 = int(rng.integers(0, width - w + 1))
        movers.append(Instance(CAR, (y1 - h, x0, y1, x0 + w), _jitter(rng, 0.2)))
    for _ in range(rng.integers(0, 4)):
        h = int(rng.integers(10, 19))
        w = int(rng.integers(3, 7))
        y1 = int(rng.integers(top + h, height + 1))
        x0 = int(rng.integers(0, width - w + 1))
        movers.append(Instance(PERSON, (y1 - h, x0, y1, x0 + w), _jitter(rng, 0.1)))
    # nearer (lower) movers are drawn last
    movers.sort(key=lambda o: o.box[2])
    objs.extend(movers)
    return spec


def _paint(spec: SceneSpec, palette, keep=None):
    """Noise-free RGB canvas and label map. ``keep`` filters instances by index."""
    h, w = spec.height, spec.width
    img = np.empty((h, w, 3), dtype=np.float64)
    lbl = np.empty((h, w), dtype=np.uint8)
    top = spec.road_top
    for cls, rows in ((SKY, slice(0, spec.sky_rows)), (BUILDING, slice(spec.sky_rows, top)),
                      (ROAD, slice(top, h))):
        img[rows] = np.add(palette[cls], spec.band_jitter[cls])
        lbl[rows] = cls
    yy, xx = np.mgrid[0:h, 0:w]
    for i, inst in enumerate(spec.instances):
        if keep is not None and not keep[i]:
            continue
        y0, x0, y1, x1 = inst.box
        if y1 <= y0 or x1 <= x0:
            continue
        if inst.ellipse:
            cy, cx = (y0 + y1 - 1) / 2, (x0 + x1 - 1) / 2
            ry, rx = max((y1 - y0) / 2, 0.5), max((x1 - x0) / 2, 0.5)
            sel = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            sel = np.zeros((h, w), dtype=bool)
            sel[y0:y1, x0:x1] = True
        img[sel] = np.add(palette[inst.cls], inst.jitter)
        lbl[sel] = inst.cls
    return np.clip(img, 0.0, 1.0), lbl


def _shift(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Translate by ``(dy, dx)`` pixels, replicating the border into exposed strips."""
    h, w = arr.shape[:2]
    rows = np.clip(np.arange(h) - dy, 0, h - 1)
    cols = np.clip(np.arange(w) - dx, 0, w - 1)
    return arr[rows][:, cols]


def night_transform(day_clean: np.ndarray, params: NightParams) -> np.ndarray:
    out = params.gain * np.power(day_clean, params.gamma)
    out[..., 2] += params.blue_cast
    return out


def render(spec: SceneSpec, mode: str, rng: np.random.Generator,
           night: NightParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Render ``spec`` as an HxWx3 float image in [0, 1] and an HxW uint8 label map."""
    if mode == "source":
        img, lbl = _paint(spec, PALETTE_A)
        img = img + rng.normal(0.0, DAY_NOISE, size=img.shape)
    elif mode == "day":
        img, lbl = _paint(spec, PALETTE_B)
        img = img + rng.normal(0.0, DAY_NOISE, size=img.shape)
    elif mode == "night":
        night = night or NightParams()
        keep = [not (inst.cls in DYNAMIC_CLASSES and rng.random() < night.removal_prob)
                for inst in spec.instances]
        img, lbl = _paint(spec, PALETTE_B, keep)
        img = night_transform(img, night)
        dy, dx = (int(v) for v in rng.integers(-night.max_shift, night.max_shift + 1, size=2))
        img, lbl = _shift(img, dy, dx), _shift(lbl, dy, dx)
        img = img + rng.normal(0.0, night.noise, size=img.shape)
    else:
        raise ValueError(f"unknown render mode {mode!r}")
    return np.clip(img, 0.0, 1.0), lbl


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)


def _save_png(path: Path, arr: np.ndarray) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path, format="PNG")
    return hashlib.sha256(path.read_bytes()).hexdigest()


def manifest_digest(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "digest"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def write_dataset(root, counts=(400, 200, 50), seed: int = 0, *, size: int = 96,
                  night: NightParams | None = None, force: bool = False) -> dict:
    """Generate the benchmark under ``root`` and return its manifest.

    Layout: ``source/{images,labels}``, ``target/{day,night}``,
    ``test/{images,labels}`` plus ``manifest.json``. Test images are night
    renderings; night training images ship without labels.
    """
    root = Path(root)
    if size < MIN_SIZE:
        raise ValueError(f"image size must be at least {MIN_SIZE}, got {size}")
    if min(counts) < 0 or counts[0] == 0:
        raise ValueError(f"split sizes must be non-negative with a non-empty source split, got {counts}")
    if root.exists() and any(root.iterdir()) and not force:
        raise OverwriteError(f"{root} exists and is not empty (use force)")
    night = night or NightParams()
    n_src, n_pairs, n_test = counts
    files: dict[str, str] = {}

    def stem(i):
        return f"{i:05d}.png"

    for i in range(n_src):
        spec = sample_scene(substream(seed, "source", i, "layout"), size, size)
        img, lbl = render(spec, "source", substream(seed, "source", i, "render"))
        files[f"source/images/{stem(i)}"] = _save_png(root / "source/images" / stem(i), to_uint8(img))
        files[f"source/labels/{stem(i)}"] = _save_png(root / "source/labels" / stem(i), lbl)

    pairs = []
    for i in range(n_pairs):
        spec = sample_scene(substream(seed, "target", i, "layout"), size, size)
        day, _ = render(spec, "day", substream(seed, "target", i, "day"))
        nimg, _ = render(spec, "night", substream(seed, "target", i, "night"), night)
        files[f"target/day/{stem(i)}"] = _save_png(root / "target/day" / stem(i), to_uint8(day))
        files[f"target/night/{stem(i)}"] = _save_png(root / "target/night" / stem(i), to_uint8(nimg))
        pairs.append({"day": f"target/day/{stem(i)}", "night": f"target/night/{stem(i)}"})

    for i in range(n_test):
        spec = sample_scene(substream(seed, "test", i, "layout"), size, size)
        img, lbl = render(spec, "night", substream(seed, "test", i, "night"), night)
        files[f"test/images/{stem(i)}"] = _save_png(root / "test/images" / stem(i), to_uint8(img))
        files[f"test/labels/{stem(i)}"] = _save_png(root / "test/labels" / stem(i), lbl)

    manifest = {
        "generator_version": GENERATOR_VERSION,
        "seed": seed,
        "image_size": size,
        "splits": {"source": n_src, "pairs": n_pairs, "test": n_test},
        "classes": list(CLASS_NAMES),
        "palette": {CLASS_NAMES[c]: [round(v, 6) for v in rgb] for c, rgb in PALETTE_A.items()},
        "night": asdict(night),
        "pairs": pairs,
        "files": files,
    }
    manifest["digest"] = manifest_digest(manifest)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


@dataclass
class BenchmarkData:
    """In-memory tensors for one generated benchmark (images ``N x 3 x H x W`` in [0, 1])."""
    source_images: torch.Tensor
    source_labels: torch.Tensor
    day_images: torch.Tensor
    night_images: torch.Tensor
    pair_ids: list[str]
    test_images: torch.Tensor
    test_labels: torch.Tensor | None
    manifest: dict


def _read_images(root: Path, rels) -> torch.Tensor:
    arrs = [np.asarray(PILImage.open(root / r).convert("RGB"), dtype=np.float32) / 255.0 for r in rels]
    if not arrs:
        return torch.empty(0)
    return torch.from_numpy(np.stack(arrs)).permute(0, 3, 1, 2).contiguous()


def _read_labels(root: Path, rels) -> torch.Tensor:
    arrs = [np.asarray(PILImage.open(root / r), dtype=np.int64) for r in rels]
    if not arrs:
        return torch.empty(0, dtype=torch.long)
    return torch.from_numpy(np.stack(arrs))


def load_dataset(root, require_test_labels: bool = False) -> BenchmarkData:
    """Load a dataset written by :func:`write_dataset` (or laid out the same way)."""
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"no manifest.json under {root}")
    manifest = json.loads(mpath.read_text())
    files = manifest["files"]
    src_imgs = sorted(k for k in files if k.startswith("source/images/"))
    src_lbls = [k.replace("source/images/", "source/labels/") for k in src_imgs]
    if not src_imgs:
        raise DataError("dataset has no labeled source images")
    pairs = manifest["pairs"]
    for p in pairs:
        if os.path.basename(p["day"]) != os.path.basename(p["night"]):
            raise DataError(f"unpaired target files {p['day']} / {p['night']}")
    test_imgs = sorted(k for k in files if k.startswith("test/images/"))
    test_lbls = [k.replace("test/images/", "test/labels/") for k in test_imgs]
    have_labels = all((root / r).is_file() for r in test_lbls) and bool(test_lbls)
    if require_test_labels and not have_labels:
        raise DataError("test split has no labels")
    return BenchmarkData(
        source_images=_read_images(root, src_imgs),
        source_labels=_read_labels(root, src_lbls),
        day_images=_read_images(root, [p["day"] for p in pairs]),
        night_images=_read_images(root, [p["night"] for p in pairs]),
        pair_ids=[os.path.basename(p["day"]) for p in pairs],
        test_images=_read_images(root, test_imgs),
        test_labels=_read_labels(root, test_lbls) if have_labels else None,
        manifest=manifest,
    )


def colorize(labels: np.ndarray) -> np.ndarray:
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    for c, rgb in LABEL_PALETTE.items():
        out[labels == c] = rgb
    out[labels == IGNORE_ID] = (0, 0, 0)
    return out
