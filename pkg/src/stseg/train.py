"""Two-stage optimization: train the single-image network, freeze it,
cache its probability maps for every acquisition date, then train the
temporal fusion model on the cached sequences.

Runs are seed-deterministic end to end: batch sampling, augmentation and
initialization all derive from the configured seed, so a rerun reproduces
checkpoints and metric logs byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import dataset as ds
from . import tensorio
from .augment import N_OPS, dihedral_apply
from .convlstm import ConvLstmConfig, convlstm_apply, convlstm_init, temporal_forward
from .losses import (LossConfig, combine_joint, cross_entropy, mask_to_classes,
                     mask_to_onehot, pixel_accuracy, probs_to_classes, soft_iou)
from .optim import Adam, clip_global_norm
from .params import ParamStore
from .tensor import Tensor
from .unet import UNetConfig, unet_apply, unet_forward, unet_init

DEFAULT_SCHEDULE = ((10, 0.1), (10, 0.01), (10, 0.001))


@dataclass
class TrainConfig:
    stage: str = "fcn"
    lr_schedule: tuple[tuple[int, float], ...] = DEFAULT_SCHEDULE
    batches_per_epoch: int = 8
    batch_size: int = 4
    seed: int = 0
    alpha: float = 0.7
    sequence_length: int = 3
    crop: Optional[int] = None       # train-time random square crop
    clip_norm: float = 5.0           # gradient clipping, rnn stage only

    def __post_init__(self):
        if self.stage not in ("fcn", "rnn"):
            raise ValueError(f"stage must be fcn or rnn, got {self.stage!r}")
        if not self.lr_schedule:
            raise ValueError("empty lr schedule")
        last = float("inf")
        for epochs, lr in self.lr_schedule:
            if epochs <= 0 or lr <= 0:
                raise ValueError("schedule entries need epochs > 0 and lr > 0")
            if lr > last:
                raise ValueError("lr schedule must be non-increasing")
            last = lr
        if self.batches_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("batches_per_epoch and batch_size must be >= 1")


def total_epochs(schedule) -> int:
    return sum(e for e, _ in schedule)


def lr_at_epoch(schedule, epoch: int) -> float:
    """Learning rate for a 1-based epoch index."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    upto = 0
    for epochs, lr in schedule:
        upto += epochs
        if epoch <= upto:
            return lr
    raise ValueError(f"epoch {epoch} beyond the {upto}-epoch schedule")


def parse_schedule(text: str) -> tuple[tuple[int, float], ...]:
    """Parses "10:0.1,10:0.01" into ((10, 0.1), (10, 0.01))."""
    out = []
    for part in text.split(","):
        epochs, lr = part.split(":")
        out.append((int(epochs), float(lr)))
    return tuple(out)


class MetricLog:
    """JSON-lines metric sink (one object per epoch) with optional echo."""

    def __init__(self, path, echo: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.echo = echo
        self._fh = open(self.path, "w")

    def write(self, record: dict) -> None:
        line = json.dumps(record)
        self._fh.write(line + "\n")
        self._fh.flush()
        if self.echo:
            print(line, flush=True)

    def close(self) -> None:
        self._fh.close()


def _save_checkpoint(path: Path, store: ParamStore, sidecar: dict) -> None:
    store.save(path)
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    state = tensorio.load_container(path)
    with open(path.with_suffix(".json")) as f:
        sidecar = json.load(f)
    return state, sidecar


def load_fcn_checkpoint(path) -> tuple[ParamStore, UNetConfig, np.ndarray, np.ndarray]:
    state, sidecar = load_checkpoint(path)
    if sidecar.get("kind") != "fcn":
        raise ValueError(f"{path} is not an fcn checkpoint")
    cfg = UNetConfig(**sidecar["model"])
    store = unet_init(cfg, seed=0)
    store.load_state(state)
    return (store, cfg, np.asarray(sidecar["norm_mean"], dtype=np.float32),
            np.asarray(sidecar["norm_std"], dtype=np.float32))


def load_rnn_checkpoint(path) -> tuple[ParamStore, ConvLstmConfig]:
    state, sidecar = load_checkpoint(path)
    if sidecar.get("kind") != "rnn":
        raise ValueError(f"{path} is not an rnn checkpoint")
    cfg = ConvLstmConfig(**{k: (tuple(v) if isinstance(v, list) else v)
                            for k, v in sidecar["model"].items()})
    store = convlstm_init(cfg, seed=0)
    store.load_state(state)
    return store, cfg


def _random_window(rng, h: int, w: int, crop: Optional[int]) -> tuple[slice, slice]:
    if crop is None or (crop >= h and crop >= w):
        return slice(0, h), slice(0, w)
    r = int(rng.integers(0, h - crop + 1))
    c = int(rng.integers(0, w - crop + 1))
    return slice(r, r + crop), slice(c, c + crop)


def evaluate_fcn(store: ParamStore, cfg: UNetConfig, samples, mean, std) -> float:
    """Mean per-date pixel accuracy over all scenes (the single-image score)."""
    accs = []
    for s in samples:
        target = mask_to_classes(s.label)
        for img in s.images:
            probs = unet_apply(ds.normalize_image(img, mean, std), store, cfg)
            accs.append(pixel_accuracy(probs_to_classes(probs), target))
    return float(np.mean(accs))


def train_fcn(data_root, model_cfg: UNetConfig, cfg: TrainConfig, run_dir,
              echo: bool = False) -> dict:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    train = ds.load_split(data_root, "train")
    val = ds.load_split(data_root, "val")
    if not train or not val:
        raise ValueError("dataset needs at least one train and one val scene")
    mean, std = ds.compute_channel_stats(train)

    store = unet_init(model_cfg, cfg.seed)
    adam = Adam(store)
    rng = np.random.default_rng([101, cfg.seed])
    loss_cfg = LossConfig(alpha=cfg.alpha)
    log = MetricLog(run_dir / "log.jsonl", echo=echo)
    sidecar_base = {
        "kind": "fcn",
        "model": asdict(model_cfg),
        "train": _config_snapshot(cfg),
        "norm_mean": [float(v) for v in mean],
        "norm_std": [float(v) for v in std],
    }
    best_acc = -1.0
    results: dict = {}

    try:
        for epoch in range(1, total_epochs(cfg.lr_schedule) + 1):
            lr = lr_at_epoch(cfg.lr_schedule, epoch)
            losses, hs, js, accs = [], [], [], []
            for _ in range(cfg.batches_per_epoch):
                xs, ys = [], []
                for _ in range(cfg.batch_size):
                    s = train[int(rng.integers(len(train)))]
                    t = int(rng.integers(len(s.images)))
                    rs, cs = _random_window(rng, *s.label.shape, cfg.crop)
                    op = int(rng.integers(N_OPS))
                    img = dihedral_apply(s.images[t][:, rs, cs], op)
                    lab = dihedral_apply(s.label[rs, cs], op)
                    xs.append(ds.normalize_image(img, mean, std))
                    ys.append(mask_to_onehot(lab))
                x = Tensor(np.stack(xs))
                target = np.stack(ys)
                probs = unet_forward(x, store, model_cfg, mode="train")
                h = cross_entropy(probs, target, loss_cfg.epsilon)
                j = soft_iou(probs, target, loss_cfg.epsilon)
                loss = combine_joint(h, j, loss_cfg.alpha)
                store.zero_grads()
                loss.backward()
                adam.step(lr)
                losses.append(loss.item())
                hs.append(h.item())
                js.append(j.item())
                accs.append(pixel_accuracy(probs_to_classes(probs.data),
                                           mask_to_classes(target[:, 0])))
            acc_val = evaluate_fcn(store, model_cfg, val, mean, std)
            record = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)),
                      "H": float(np.mean(hs)), "J": float(np.mean(js)),
                      "acc_train": float(np.mean(accs)), "acc_val": acc_val}
            log.write(record)
            sidecar = {**sidecar_base, "epoch": epoch, "metrics": record}
            _save_checkpoint(run_dir / "ckpt_last.sttc", store, sidecar)
            if acc_val > best_acc:
                best_acc = acc_val
                _save_checkpoint(run_dir / "ckpt_best.sttc", store, sidecar)
            results = record
    finally:
        log.close()

    return {"run_dir": str(run_dir), "best": str(run_dir / "ckpt_best.sttc"),
            "last": str(run_dir / "ckpt_last.sttc"), "final": results,
            "acc_val_best": best_acc}


def generate_pmap_sequences(fcn_ckpt, data_root, cache_dir,
                            splits=("train", "val")) -> Path:
    """Eval-mode probability maps for every image of every scene, cached as
    one tensor file per date."""
    store, cfg, mean, std = load_fcn_checkpoint(fcn_ckpt)
    cache_dir = Path(cache_dir)
    manifest: dict = {"fcn_ckpt": str(fcn_ckpt), "splits": {}}
    for split in splits:
        names = []
        for scene_dir in ds.list_scene_dirs(data_root, split):
            sample = ds.load_scene(scene_dir)
            out = cache_dir / split / scene_dir.name
            out.mkdir(parents=True, exist_ok=True)
            for t, img in enumerate(sample.images):
                probs = unet_apply(ds.normalize_image(img, mean, std), store, cfg)
                tensorio.save_tensor(out / f"pmap_t{t}.stt1", probs)
            names.append(scene_dir.name)
        manifest["splits"][split] = names
    path = cache_dir / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_pmap_sequence(cache_dir, split: str, scene: str) -> np.ndarray:
    scene_dir = Path(cache_dir) / split / scene
    paths = sorted(scene_dir.glob("pmap_t*.stt1"),
                   key=lambda p: int(p.stem.split("pmap_t")[1]))
    if not paths:
        raise FileNotFoundError(f"no cached probability maps under {scene_dir}")
    return np.stack([tensorio.load_tensor(p) for p in paths])


def evaluate_fused(store: ParamStore, cfg: ConvLstmConfig, pmap_seqs,
                   labels) -> float:
    accs = []
    for seq, label in zip(pmap_seqs, labels):
        fused = convlstm_apply(seq.astype(np.float32), store, cfg)
        accs.append(pixel_accuracy(probs_to_classes(fused), mask_to_classes(label)))
    return float(np.mean(accs))


def train_rnn(data_root, cache_dir, model_cfg: ConvLstmConfig, cfg: TrainConfig,
              run_dir, echo: bool = False) -> dict:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(Path(cache_dir) / "manifest.json") as f:
        manifest = json.load(f)
    train_names = manifest["splits"].get("train", [])
    val_names = manifest["splits"].get("val", [])
    if not train_names or not val_names:
        raise ValueError("probability-map cache needs train and val scenes")

    train_seqs = [load_pmap_sequence(cache_dir, "train", n) for n in train_names]
    train_labels = [ds.load_scene(Path(data_root) / "train" / n).label
                    for n in train_names]
    val_seqs = [load_pmap_sequence(cache_dir, "val", n) for n in val_names]
    val_labels = [ds.load_scene(Path(data_root) / "val" / n).label
                  for n in val_names]
    for seq, name in zip(train_seqs, train_names):
        if seq.shape[0] != cfg.sequence_length:
            raise ValueError(f"scene {name} has {seq.shape[0]} cached maps, "
                             f"expected {cfg.sequence_length}")

    store = convlstm_init(model_cfg, cfg.seed)
    adam = Adam(store)
    rng = np.random.default_rng([202, cfg.seed])
    loss_cfg = LossConfig(alpha=cfg.alpha)
    log = MetricLog(run_dir / "log.jsonl", echo=echo)
    sidecar_base = {"kind": "rnn", "model": asdict(model_cfg),
                    "train": _config_snapshot(cfg), "fcn_ckpt": manifest["fcn_ckpt"]}
    best_acc = -1.0
    results: dict = {}

    try:
        for epoch in range(1, total_epochs(cfg.lr_schedule) + 1):
            lr = lr_at_epoch(cfg.lr_schedule, epoch)
            losses, hs, js, accs = [], [], [], []
            for _ in range(cfg.batches_per_epoch):
                seq_batch, ys = [], []
                for _ in range(cfg.batch_size):
                    i = int(rng.integers(len(train_seqs)))
                    seq, label = train_seqs[i], train_labels[i]
                    rs, cs = _random_window(rng, *label.shape, cfg.crop)
                    op = int(rng.integers(N_OPS))
                    seq_batch.append(dihedral_apply(seq[:, :, rs, cs], op))
                    ys.append(mask_to_onehot(dihedral_apply(label[rs, cs], op)))
                batch = np.stack(seq_batch)  # [B,T,C,h,w]
                target = np.stack(ys)
                steps = [Tensor(np.ascontiguousarray(batch[:, t]))
                         for t in range(batch.shape[1])]
                fused = temporal_forward(steps, store, model_cfg)
                h = cross_entropy(fused, target, loss_cfg.epsilon)
                j = soft_iou(fused, target, loss_cfg.epsilon)
                loss = combine_joint(h, j, loss_cfg.alpha)
                store.zero_grads()
                loss.backward()
                clip_global_norm(store, cfg.clip_norm)
                adam.step(lr)
                losses.append(loss.item())
                hs.append(h.item())
                js.append(j.item())
                accs.append(pixel_accuracy(probs_to_classes(fused.data),
                                           mask_to_classes(target[:, 0])))
            acc_val = evaluate_fused(store, model_cfg, val_seqs, val_labels)
            record = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)),
                      "H": float(np.mean(hs)), "J": float(np.mean(js)),
                      "acc_train": float(np.mean(accs)), "acc_val": acc_val}
            log.write(record)
            sidecar = {**sidecar_base, "epoch": epoch, "metrics": record}
            _save_checkpoint(run_dir / "ckpt_last.sttc", store, sidecar)
            if acc_val > best_acc:
                best_acc = acc_val
                _save_checkpoint(run_dir / "ckpt_best.sttc", store, sidecar)
            results = record
    finally:
        log.close()

    return {"run_dir": str(run_dir), "best": str(run_dir / "ckpt_best.sttc"),
            "last": str(run_dir / "ckpt_last.sttc"), "final": results,
            "acc_val_best": best_acc}


def _config_snapshot(cfg: TrainConfig) -> dict:
    snap = asdict(cfg)
    snap["lr_schedule"] = [[int(e), float(lr)] for e, lr in cfg.lr_schedule]
    return snap
