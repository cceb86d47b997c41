"""Desk-scale temporal-fusion benchmark.

For each seed: synthesize a multi-date dataset, train the single-image
network, cache its probability maps, train the fusion model, then score both
on the held-out scenes.  Reports

* the mean pixel-accuracy gain of fused prediction over single-image
  prediction, and
* the day-variance factor: pixelwise disagreement among the three per-date
  masks of a scene, relative to the disagreement between fused masks computed
  from two disjoint radiometry draws of that same scene.

Runnable directly: ``python -m stseg.benchmark --out runs/bench``.
"""

from __future__ import annotations

import argparse
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from .convlstm import ConvLstmConfig, convlstm_apply
from .losses import mask_to_classes, pixel_accuracy, probs_to_classes, probs_to_mask
from .synth import JITTER_PRESETS, synth_scene
from .train import (TrainConfig, evaluate_fcn, generate_pmap_sequences,
                    load_fcn_checkpoint, load_rnn_checkpoint, train_fcn,
                    train_rnn)
from .unet import UNetConfig, unet_apply

JITTER_REDRAW_OFFSET = 500_000  # disjoint radiometry draw for the same geometry


@dataclass
class BenchmarkConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    train_scenes: int = 16
    val_scenes: int = 4
    size: int = 256
    seq_len: int = 3
    jitter_preset: str = "default"
    fcn_model: UNetConfig = field(default_factory=lambda: UNetConfig(
        in_channels=3, base_filters=8, depth=3))
    fcn_schedule: tuple = ((4, 3e-3), (3, 1e-3))
    rnn_model: ConvLstmConfig = field(default_factory=lambda: ConvLstmConfig(
        input_channels=2, hidden_filters=8, layers=2))
    rnn_schedule: tuple = ((8, 3e-3), (6, 1e-3))
    crop: int = 128
    batch_size: int = 4
    batches_per_epoch: int = 8


def _scene_seed(seed: int, index: int) -> int:
    return seed * 1000 + index


def build_dataset(cfg: BenchmarkConfig, seed: int, root: Path) -> None:
    jitter = JITTER_PRESETS[cfg.jitter_preset]
    index = 0
    for split, count in (("train", cfg.train_scenes), ("val", cfg.val_scenes)):
        for _ in range(count):
            sample = synth_scene(_scene_seed(seed, index), cfg.size, cfg.size,
                                 cfg.seq_len, jitter)
            ds.save_scene(root / split / f"scene_{index:03d}", sample)
            index += 1


def _date_disagreement(masks: list[np.ndarray]) -> float:
    """Fraction of pixels where the per-date masks do not all agree."""
    stack = np.stack(masks)
    return float((stack.min(axis=0) != stack.max(axis=0)).mean())


def run_seed(cfg: BenchmarkConfig, seed: int, workdir: Path) -> dict:
    t0 = time.time()
    root = workdir / f"seed_{seed}"
    build_dataset(cfg, seed, root)

    fcn_cfg = TrainConfig(stage="fcn", lr_schedule=cfg.fcn_schedule,
                          batches_per_epoch=cfg.batches_per_epoch,
                          batch_size=cfg.batch_size, seed=seed, crop=cfg.crop,
                          sequence_length=cfg.seq_len)
    fcn_res = train_fcn(root, cfg.fcn_model, fcn_cfg, root / "run_fcn")
    cache = root / "cache"
    generate_pmap_sequences(fcn_res["best"], root, cache)
    rnn_cfg = TrainConfig(stage="rnn", lr_schedule=cfg.rnn_schedule,
                          batches_per_epoch=cfg.batches_per_epoch,
                          batch_size=cfg.batch_size, seed=seed, crop=cfg.crop,
                          sequence_length=cfg.seq_len)
    rnn_res = train_rnn(root, cache, cfg.rnn_model, rnn_cfg, root / "run_rnn")

    fcn_store, fcn_model, mean, std = load_fcn_checkpoint(fcn_res["best"])
    rnn_store, rnn_model = load_rnn_checkpoint(rnn_res["best"])
    val = ds.load_split(root, "val")
    acc_single = evaluate_fcn(fcn_store, fcn_model, val, mean, std)

    jitter = JITTER_PRESETS[cfg.jitter_preset]
    fused_accs, date_dis, fused_dis = [], [], []
    for i, sample in enumerate(val):
        geometry = _scene_seed(seed, cfg.train_scenes + i)

        def fused_probs(s) -> np.ndarray:
            pmaps = np.stack([
                unet_apply(ds.normalize_image(img, mean, std), fcn_store, fcn_model)
                for img in s.images])
            return convlstm_apply(pmaps, rnn_store, rnn_model)

        probs_a = fused_probs(sample)
        fused_accs.append(pixel_accuracy(probs_to_classes(probs_a),
                                         mask_to_classes(sample.label)))
        date_masks = [probs_to_mask(
            unet_apply(ds.normalize_image(img, mean, std), fcn_store, fcn_model))
            for img in sample.images]
        date_dis.append(_date_disagreement(date_masks))

        redraw = synth_scene(geometry, cfg.size, cfg.size, cfg.seq_len, jitter,
                             jitter_seed=geometry + JITTER_REDRAW_OFFSET)
        assert np.array_equal(redraw.label, sample.label)
        probs_b = fused_probs(redraw)
        fused_dis.append(float((probs_to_mask(probs_a)
                                != probs_to_mask(probs_b)).mean()))

    return {
        "seed": seed,
        "acc_single": acc_single,
        "acc_fused": float(np.mean(fused_accs)),
        "gap": float(np.mean(fused_accs)) - acc_single,
        "date_disagreement": float(np.mean(date_dis)),
        "fused_disagreement": float(np.mean(fused_dis)),
        "seconds": time.time() - t0,
    }


def run_benchmark(cfg: BenchmarkConfig, workdir) -> dict:
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    per_seed = []
    for seed in cfg.seeds:
        result = run_seed(cfg, seed, workdir)
        per_seed.append(result)
        print(json.dumps(result), flush=True)
    date_dis = float(np.mean([r["date_disagreement"] for r in per_seed]))
    fused_dis = float(np.mean([r["fused_disagreement"] for r in per_seed]))
    summary = {
        "per_seed": per_seed,
        "mean_acc_single": float(np.mean([r["acc_single"] for r in per_seed])),
        "mean_acc_fused": float(np.mean([r["acc_fused"] for r in per_seed])),
        "mean_gap": float(np.mean([r["gap"] for r in per_seed])),
        "mean_date_disagreement": date_dis,
        "mean_fused_disagreement": fused_dis,
        "variance_factor": date_dis / fused_dis if fused_dis > 0 else float("inf"),
        "total_seconds": time.time() - t0,
    }
    with open(workdir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="working/report directory")
    parser.add_argument("--seeds", default="0,1,2,3,4")
    args = parser.parse_args(argv)
    cfg = BenchmarkConfig(seeds=tuple(int(s) for s in args.seeds.split(",")))
    summary = run_benchmark(cfg, args.out)
    print(json.dumps({k: v for k, v in summary.items() if k != "per_seed"},
                     indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
