"""Command-line entry point.

Exit codes: 0 success, 2 usage error or refused overwrite, 3 missing or
unusable inputs, 4 gradient-check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from PIL import Image as PILImage

from . import gradcheck
from .checkpoint import load_checkpoint
from .config import DESK, Config, MODES, load_config, parse_overrides
from .evaluation import predict
from .exceptions import CheckpointError, DataError, OverwriteError
from .plotting import plot_sweep
from .runs import (CHECKPOINT_DIR, REPORT_FILE, config_of, evaluate_checkpoint, networks_from,
                   run_adapt, run_pretrain)
from .synthdata import colorize, load_dataset, write_dataset

log = logging.getLogger("bimix")

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_GRADCHECK = 0, 2, 3, 4
SWEEP_DEFAULT = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)


class MissingInput(Exception):
    pass


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", type=Path, help="key = value file overriding the desk defaults")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=out_required)
    p.add_argument("--resume", action="store_true", help="continue the run already in --out")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single config field (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bimix", description="Day/night adaptive segmentation with bidirectional mixing.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic benchmark")
    _common(p)
    p.add_argument("--source-n", type=int, default=400)
    p.add_argument("--pairs-n", type=int, default=200)
    p.add_argument("--test-n", type=int, default=50)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("pretrain", help="source-only training of the segmenter")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--iters", type=int, help="pretraining iterations")

    p = sub.add_parser("adapt", help="day/night adaptation from a pretrained checkpoint")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pretrained", type=Path, required=True, help="pretrain run or checkpoint directory")
    p.add_argument("--ablate", choices=MODES, help="mixing mode")
    p.add_argument("--no-relight", action="store_true", help="drop the relighting network")
    p.add_argument("--iters", type=int, help="adaptation iterations")
    p.add_argument("--force-config", action="store_true", help="accept a mismatched checkpoint config")

    p = sub.add_parser("eval", help="night-test mIoU of a checkpoint")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True, help="run or checkpoint directory")
    p.add_argument("--dump-preds", action="store_true", help="write colour-coded predictions")

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    _common(p, out_required=False)
    p.add_argument("--loss", action="append", choices=sorted(gradcheck.CHECKS), help="restrict to one loss (repeatable)")
    p.add_argument("--seeds", type=int, default=5)

    p = sub.add_parser("sweep", help="night mIoU against one loss weight")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pretrained", type=Path, required=True)
    p.add_argument("--param", choices=("mu1", "mu2", "mu3"), required=True)
    p.add_argument("--values", type=float, nargs="+", default=list(SWEEP_DEFAULT))
    p.add_argument("--iters", type=int)
    return ap


def _pairs(items) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = v
    return out


def resolve_config(args) -> Config:
    """Desk defaults, then the config file, then explicit flags."""
    cfg = load_config(args.config) if args.config else DESK
    cfg = parse_overrides(_pairs(args.set), cfg)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "ablate", None):
        changes["mode"] = args.ablate
    if getattr(args, "no_relight", False):
        changes["relight_enabled"] = False
    iters = getattr(args, "iters", None)
    if iters is not None:
        changes["pretrain_iters" if args.command == "pretrain" else "max_iters"] = iters
    return cfg.replace(**changes)


def _checkpoint_path(path: Path) -> Path:
    """Accept either a checkpoint directory or a run directory containing one."""
    if (path / CHECKPOINT_DIR).is_dir():
        return path / CHECKPOINT_DIR
    return path


def _load_ckpt(path: Path):
    path = _checkpoint_path(path)
    if not path.is_dir():
        raise MissingInput(f"no checkpoint at {path}")
    return load_checkpoint(path)


def _load_data(path: Path, require_test_labels: bool = False):
    if not (path / "manifest.json").is_file():
        raise MissingInput(f"no dataset at {path} (run gen-data first)")
    return load_dataset(path, require_test_labels=require_test_labels)


def cmd_gen_data(args) -> int:
    seed = 0 if args.seed is None else args.seed
    manifest = write_dataset(args.out, (args.source_n, args.pairs_n, args.test_n), seed,
                             size=args.size, force=args.force)
    print(f"wrote {args.out} digest {manifest['digest']}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    data = _load_data(args.data)
    ckpt = run_pretrain(data, cfg, args.out, resume=args.resume)
    print(f"pretrained {ckpt.iteration} iterations -> {args.out / CHECKPOINT_DIR}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = resolve_config(args)
    data = _load_data(args.data)
    pre = _load_ckpt(args.pretrained)
    ckpt = run_adapt(data, pre, cfg, args.out, resume=args.resume, force=args.force_config)
    rep = args.out / REPORT_FILE
    msg = f"adapted {ckpt.iteration} iterations ({cfg.mode})"
    if rep.is_file():
        msg += f", night mIoU {json.loads(rep.read_text())['miou']:.4f}"
    print(msg)
    return EXIT_OK


def cmd_eval(args) -> int:
    data = _load_data(args.data)
    if data.test_labels is None:
        raise MissingInput(f"{args.data} has no test labels")
    ckpt = _load_ckpt(args.checkpoint)
    rep = evaluate_checkpoint(ckpt, data)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / REPORT_FILE).write_text(json.dumps(rep, indent=1))
    if args.dump_preds:
        nets, cfg = networks_from(ckpt)
        preds = predict(nets, data.test_images, cfg.relight_enabled and ckpt.phase == "adapt")
        pdir = args.out / "preds"
        pdir.mkdir(exist_ok=True)
        names = sorted(k for k in data.manifest["files"] if k.startswith("test/images/"))
        for name, pred in zip(names, preds):
            PILImage.fromarray(colorize(pred.numpy())).save(pdir / Path(name).name)
    print(f"night mIoU {rep['miou']:.4f} over {rep['pixel_count']} pixels")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(args.loss, range(args.seeds))
    table = gradcheck.format_table(results)
    print(table)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gradcheck.txt").write_text(table + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_GRADCHECK


def sweep_config(cfg: Config, param: str, value: float) -> Config:
    """One grid point; sweeping a branch weight disables the other branch."""
    mode = {"mu1": "f2m", "mu2": "m2f"}.get(param, cfg.mode)
    return cfg.replace(mode=mode, **{param: value})


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    data = _load_data(args.data, require_test_labels=True)
    pre = _load_ckpt(args.pretrained)
    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in args.values:
        point = sweep_config(cfg, args.param, v)
        run_dir = args.out / f"{args.param}={v:g}"
        run_adapt(data, pre, point, run_dir, resume=args.resume)
        miou = json.loads((run_dir / REPORT_FILE).read_text())["miou"]
        rows.append({"param": args.param, "value": v, "mode": point.mode, "miou": miou})
        print(f"{args.param}={v:g} ({point.mode}): night mIoU {miou:.4f}")
    with open(args.out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["param", "value", "mode", "miou"])
        w.writeheader()
        w.writerows(rows)
    plot_sweep([r["value"] for r in rows], [r["miou"] for r in rows], args.param, args.out / "sweep.png")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "adapt": cmd_adapt,
            "eval": cmd_eval, "gradcheck": cmd_gradcheck, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except OverwriteError as exc:
        code, msg = EXIT_USAGE, str(exc)
    except (MissingInput, DataError, CheckpointError, FileNotFoundError) as exc:
        code, msg = EXIT_MISSING, str(exc)
    except (KeyError, ValueError) as exc:  # bad config keys or values
        code, msg = EXIT_USAGE, str(exc)
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
