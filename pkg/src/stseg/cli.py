"""Command-line interface.

Subcommands: synth (generate a synthetic multi-date dataset), train (fcn or
rnn stage), predict (tiled inference and the date-disagreement composite),
eval (mask accuracy/IoU report), gradcheck (finite-difference verification).

Exit codes: 0 success, 1 user error (flags, paths, inputs), 2 numerical
failure (non-finite values or a failed gradient check).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .kernels import BACKEND
from .tensor import NumericalError

EXIT_OK = 0
EXIT_USER = 1
EXIT_NUMERIC = 2


class CliError(Exception):
    """User-facing error: message printed, exit code 1."""


def _write_manifest(run_dir: Path, command: str, args: dict,
                    replace: bool = False) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": args,
        "seed": args.get("seed"),
        "build": f"stseg-{__version__}+{BACKEND}",
        "created_unix": time.time(),
    }
    path = run_dir / "manifest.json"
    if path.exists() and not replace:
        raise CliError(f"{path} already exists; run directories are append-only "
                       "(use a fresh --run-dir)")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


class _RunLock:
    """Exclusive lock file guarding a run directory."""

    def __init__(self, run_dir: Path):
        run_dir.mkdir(parents=True, exist_ok=True)
        self.path = run_dir / ".lock"
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CliError(f"{run_dir} is locked by another run "
                           f"(remove {self.path} if stale)") from None

    def release(self) -> None:
        os.close(self.fd)
        os.unlink(self.path)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise CliError(f"--size expects HxW, got {text!r}") from None


# -- subcommands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    from . import dataset as ds
    from .synth import JITTER_PRESETS, synth_scene

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"{out} exists and is not empty; pass --force to overwrite")
    if args.jitter_preset not in JITTER_PRESETS:
        raise CliError(f"unknown jitter preset {args.jitter_preset!r}; "
                       f"choose from {sorted(JITTER_PRESETS)}")
    h, w = _parse_size(args.size)
    jitter = JITTER_PRESETS[args.jitter_preset]
    splits = {"train": args.scenes, "val": args.val_scenes, "test": args.test_scenes}
    scene_seed = args.seed
    n_written = 0
    for split, count in splits.items():
        for i in range(count):
            sample = synth_scene(scene_seed, h, w, args.seq, jitter)
            ds.save_scene(out / split / f"scene_{scene_seed:05d}", sample)
            scene_seed += 1
            n_written += 1
    snapshot = {k: v for k, v in vars(args).items() if k != "fn"}
    _write_manifest(out, "synth", snapshot, replace=args.force)
    print(f"wrote {n_written} scenes under {out} "
          f"({args.scenes} train / {args.val_scenes} val / {args.test_scenes} test)")
    return EXIT_OK


def cmd_train(args) -> int:
    from .convlstm import ConvLstmConfig
    from .train import (TrainConfig, generate_pmap_sequences, parse_schedule,
                        train_fcn, train_rnn)
    from .unet import UNetConfig

    run_dir = Path(args.run_dir)
    schedule = parse_schedule(args.schedule)
    tcfg = TrainConfig(stage=args.stage, lr_schedule=schedule,
                       batches_per_epoch=args.batches_per_epoch,
                       batch_size=args.batch_size, seed=args.seed,
                       alpha=args.alpha, sequence_length=args.seq,
                       crop=args.crop)
    lock = _RunLock(run_dir)
    try:
        snapshot = {k: v for k, v in vars(args).items() if k != "fn"}
        _write_manifest(run_dir, f"train-{args.stage}", snapshot)
        if args.stage == "fcn":
            model = UNetConfig(base_filters=args.base_filters, depth=args.depth)
            result = train_fcn(args.data, model, tcfg, run_dir, echo=True)
        else:
            if not args.fcn_ckpt:
                raise CliError("--stage rnn requires --fcn-ckpt (a trained "
                               "fcn checkpoint)")
            cache = run_dir / "pmap_cache"
            generate_pmap_sequences(args.fcn_ckpt, args.data, cache)
            spatial = None
            if args.peephole == "per-element":
                if args.crop is None:
                    raise CliError("--peephole per-element needs --crop to fix "
                                   "the spatial extent")
                spatial = (args.crop, args.crop)
            model = ConvLstmConfig(hidden_filters=args.hidden_filters,
                                   layers=args.rnn_layers,
                                   peephole=args.peephole,
                                   o_peephole_state=args.o_peephole_state,
                                   interlayer_projection=args.interlayer_projection,
                                   spatial=spatial)
            result = train_rnn(args.data, cache, model, tcfg, run_dir, echo=True)
    finally:
        lock.release()
    print(json.dumps({"run_dir": result["run_dir"], "best": result["best"],
                      "acc_val_best": result["acc_val_best"]}))
    return EXIT_OK


def cmd_predict(args) -> int:
    from .predict import run_prediction

    images = [p for p in args.images.split(",") if p]
    for p in images:
        if not Path(p).exists():
            raise CliError(f"image not found: {p}")
    if not Path(args.ckpt_fcn).exists():
        raise CliError(f"checkpoint not found: {args.ckpt_fcn}")
    outputs = run_prediction(args.ckpt_fcn, images, args.out,
                             rnn_ckpt=args.ckpt_rnn, tile=args.tile,
                             overlap=args.overlap, threshold=args.threshold)
    print(json.dumps(outputs))
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import dataset as ds
    from .losses import hard_iou, pixel_accuracy

    pred = ds.load_mask(args.pred)
    truth = ds.load_mask(args.truth)
    if pred.shape != truth.shape:
        raise CliError(f"extent mismatch: prediction {pred.shape} vs "
                       f"truth {truth.shape}")
    from .losses import mask_to_classes
    report = {
        "accuracy": pixel_accuracy(mask_to_classes(pred), mask_to_classes(truth)),
        "iou": hard_iou(pred, truth),
    }
    print(json.dumps(report))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import SUITES, run_gradchecks

    if args.dtype != "f64":
        raise CliError("gradient checks run in 64-bit: pass --dtype f64")
    modules = tuple(SUITES) if args.module == "all" else (args.module,)
    unknown = [m for m in modules if m not in SUITES]
    if unknown:
        raise CliError(f"unknown module(s) {unknown}; choose from "
                       f"{sorted(SUITES)} or 'all'")
    results = run_gradchecks(modules, dtype=args.dtype, verbose=True)
    failures = [r for r in results if not r.passed]
    worst = max(results, key=lambda r: r.err)
    print(f"worst: {worst.module}.{worst.name} rel err {worst.err:.3e}")
    if failures:
        names = ", ".join(f"{r.module}.{r.name}" for r in failures)
        print(f"gradcheck FAILED: {names}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"gradcheck passed: {len(results)} checks")
    return EXIT_OK


def hash_tree(root, exclude: tuple = ("manifest.json",)) -> str:
    """Stable content hash of a directory tree (paths + bytes); manifests are
    excluded because they carry timestamps."""
    digest = hashlib.sha256()
    root = Path(root)
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        if path.name in exclude:
            continue
        digest.update(str(path.relative_to(root)).encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stseg",
        description="Road segmentation over image time series: single-image "
                    "probability maps fused by a convolutional LSTM.")
    parser.add_argument("--version", action="version",
                        version=f"stseg {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-date dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=8, help="training scenes")
    p.add_argument("--val-scenes", type=int, default=2)
    p.add_argument("--test-scenes", type=int, default=0)
    p.add_argument("--size", default="256x256", help="scene extents HxW")
    p.add_argument("--seq", type=int, default=3, help="acquisition days per scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter-preset", default="default")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train the fcn stage or the rnn stage")
    p.add_argument("--stage", choices=("fcn", "rnn"), required=True)
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--fcn-ckpt", default=None,
                   help="trained fcn checkpoint (rnn stage)")
    p.add_argument("--schedule", default="10:0.1,10:0.01,10:0.001",
                   help="epochs:lr pairs, comma separated")
    p.add_argument("--batches-per-epoch", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.7,
                   help="cross-entropy weight in the joint loss")
    p.add_argument("--seq", type=int, default=3)
    p.add_argument("--crop", type=int, default=None,
                   help="random square crop for training batches")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-filters", type=int, default=32)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--hidden-filters", type=int, default=32)
    p.add_argument("--rnn-layers", type=int, default=2)
    p.add_argument("--peephole", choices=("per-channel", "per-element"),
                   default="per-channel")
    p.add_argument("--o-peephole-state", choices=("prev", "current"),
                   default="prev")
    p.add_argument("--interlayer-projection", action="store_true",
                   help="project each recurrent layer's output back to the "
                        "class-channel count before the next layer")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="tiled inference on full rasters")
    p.add_argument("--ckpt-fcn", required=True)
    p.add_argument("--ckpt-rnn", default=None)
    p.add_argument("--images", required=True,
                   help="comma-separated PNG paths, one per acquisition day")
    p.add_argument("--tile", type=int, default=2048)
    p.add_argument("--overlap", type=int, default=512)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("eval", help="accuracy/IoU of a mask against a label")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--module", default="all",
                   help="all|tensor|nn|unet|rnn|loss")
    p.add_argument("--dtype", default="f64")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
