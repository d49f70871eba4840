"""Run directories: checkpoints, metrics streams, evaluation reports and plots.

Layout of one run directory::

    config.txt      effective configuration
    metrics.jsonl   one object per iteration
    evals.jsonl     periodic night-test mIoU (adaptation only)
    checkpoint/     latest checkpoint, rewritten every ``eval_every`` iterations
    report.json     final night-test report
    loss_curves.png
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

from .checkpoint import MANIFEST_FILE, load_checkpoint, save_checkpoint
from .config import Config, dump_config
from .evaluation import ConfusionMatrix, accumulate, predict, report
from .exceptions import CheckpointError, DataError, OverwriteError
from .plotting import plot_losses
from .synthdata import CLASS_NAMES
from .trainer import METRIC_KEYS, Checkpoint, adapt, build_networks, pretrain, restore_networks

log = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoint"
METRICS_FILE = "metrics.jsonl"
EVALS_FILE = "evals.jsonl"
REPORT_FILE = "report.json"


def metric_row(d: dict) -> dict:
    """Full metrics record in the fixed key order, zero-filling absent terms."""
    return {k: d.get(k, 0.0) for k in METRIC_KEYS}


def read_jsonl(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _truncate_jsonl(path: Path, key: str, limit: int) -> None:
    """Drop records with ``key >= limit`` (work done after the checkpoint being resumed)."""
    rows = [r for r in read_jsonl(path) if r[key] < limit]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))


def prepare_run_dir(out, resume: bool) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not resume:
        raise OverwriteError(f"{out} already holds a run; pass --resume or choose a fresh directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resume_point(out: Path, resume: bool, phase: str) -> Checkpoint | None:
    if not resume or not (out / CHECKPOINT_DIR / MANIFEST_FILE).is_file():
        return None
    ckpt = load_checkpoint(out / CHECKPOINT_DIR)
    if ckpt.phase != phase:
        raise CheckpointError(f"{out} holds a {ckpt.phase} run, not {phase}")
    return ckpt


def config_of(ckpt: Checkpoint) -> Config:
    return Config.from_dict(ckpt.config)


def evaluate_networks(nets, images, labels, cfg: Config, relight: bool | None = None) -> dict:
    relight = cfg.relight_enabled if relight is None else relight
    cm = accumulate(ConfusionMatrix(cfg.num_classes), predict(nets, images, relight), labels)
    return report(cm, CLASS_NAMES[:cfg.num_classes] if cfg.num_classes <= len(CLASS_NAMES)
                  else [str(i) for i in range(cfg.num_classes)])


def networks_from(ckpt: Checkpoint):
    cfg = config_of(ckpt)
    nets = build_networks(cfg)
    restore_networks(ckpt, nets)
    return nets, cfg


def evaluate_checkpoint(ckpt: Checkpoint, data) -> dict:
    """Night-test report; a pretrain checkpoint is scored on raw images."""
    if data.test_labels is None:
        raise DataError("test split has no labels")
    nets, cfg = networks_from(ckpt)
    relight = cfg.relight_enabled and ckpt.phase == "adapt"
    return evaluate_networks(nets, data.test_images, data.test_labels, cfg, relight)


class _MetricsSink:
    def __init__(self, path: Path):
        self.path = path
        self.rows: list[dict] = []

    def __call__(self, d: dict) -> None:
        row = metric_row(d)
        if "total" not in d:
            row["total"] = row["l_M"]
        self.rows.append(row)
        with open(self.path, "a") as fh:
            fh.write(json.dumps(row) + "\n")


def _checkpoint_stops(start: int, end: int, every: int):
    stops = list(range((start // every + 1) * every, end, every)) if every else []
    return stops + [end]


def run_pretrain(data, cfg: Config, out, *, resume: bool = False, force: bool = False,
                 stop_at: int | None = None) -> Checkpoint:
    """Source-only pretraining into the run directory ``out``."""
    out = prepare_run_dir(out, resume)
    start = _resume_point(out, resume, "pretrain")
    if start is not None and not force and start.config_digest != cfg.digest():
        raise CheckpointError("config differs from the checkpoint being resumed")
    dump_config(cfg, out / "config.txt")
    metrics = out / METRICS_FILE
    it0 = start.iteration if start else 0
    _truncate_jsonl(metrics, "iter", it0)
    sink = _MetricsSink(metrics)
    nets = build_networks(cfg)
    end = cfg.pretrain_iters if stop_at is None else min(stop_at, cfg.pretrain_iters)
    ckpt = start
    for stop in _checkpoint_stops(it0, end, cfg.eval_every):
        ckpt = pretrain(data, nets, cfg, start=ckpt, on_step=sink, stop_at=stop)
        save_checkpoint(ckpt, out / CHECKPOINT_DIR)
    plot_losses(read_jsonl(metrics), out / "loss_curves.png")
    if ckpt.iteration >= cfg.pretrain_iters and data.test_labels is not None:
        rep = evaluate_checkpoint(ckpt, data)
        (out / REPORT_FILE).write_text(json.dumps(rep, indent=1))
        log.info("pretrain night-test mIoU %.4f", rep["miou"])
    return ckpt


def run_adapt(data, pretrained: Checkpoint, cfg: Config, out, *, resume: bool = False,
              force: bool = False, stop_at: int | None = None) -> Checkpoint:
    """Adaptation into ``out``, checkpointing and evaluating every ``eval_every`` steps."""
    out = prepare_run_dir(out, resume)
    start = _resume_point(out, resume, "adapt")
    dump_config(cfg, out / "config.txt")
    metrics, evals = out / METRICS_FILE, out / EVALS_FILE
    it0 = start.iteration if start else 0
    _truncate_jsonl(metrics, "iter", it0)
    _truncate_jsonl(evals, "iter", it0 + 1)
    sink = _MetricsSink(metrics)
    ckpt = start or pretrained
    end = cfg.max_iters if stop_at is None else min(stop_at, cfg.max_iters)
    nets = None
    for stop in _checkpoint_stops(it0, end, cfg.eval_every):
        ckpt, nets = adapt(data, ckpt, cfg, on_step=sink, stop_at=stop, force=force)
        force = False  # later chunks resume our own checkpoint
        save_checkpoint(ckpt, out / CHECKPOINT_DIR)
        if data.test_labels is not None and stop > it0:
            rep = evaluate_networks(nets, data.test_images, data.test_labels, cfg)
            with open(evals, "a") as fh:
                fh.write(json.dumps({"iter": stop, "miou": rep["miou"]}) + "\n")
            log.info("iter %d night-test mIoU %.4f", stop, rep["miou"])
    plot_losses(read_jsonl(metrics), out / "loss_curves.png")
    if ckpt.iteration >= cfg.max_iters and data.test_labels is not None and nets is not None:
        rep = evaluate_networks(nets, data.test_images, data.test_labels, cfg)
        (out / REPORT_FILE).write_text(json.dumps(rep, indent=1))
    return ckpt
