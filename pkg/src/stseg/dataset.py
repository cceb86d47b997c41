"""On-disk dataset layout and image IO.

Layout: ``dataset/{train,val,test}/{scene_id}/img_t{0..T-1}.png`` plus
``label.png`` (8-bit grayscale, road = 255) and ``meta.json`` (dates, jitter
record, seed).  Images are 8-bit RGB PNG; in memory they are float32 [3,H,W]
in [0,1] quantized to the 255-level grid so a save/load round trip is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SPLITS = ("train", "val", "test")


@dataclass
class SequenceSample:
    """Co-registered image time series with one jitter-free label raster."""
    images: list[np.ndarray]          # T arrays [3,H,W] float32 in [0,1]
    label: np.ndarray                 # [H,W] uint8 {0,1}, 1 = road
    dates: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.images:
            raise ValueError("sample needs at least one image")
        hw = self.images[0].shape[1:]
        for img in self.images:
            if img.ndim != 3 or img.shape[0] != 3 or img.shape[1:] != hw:
                raise ValueError("images must be co-registered [3,H,W] stacks")
        if self.label.shape != hw:
            raise ValueError("label extents must match the images")
        if not np.isin(self.label, (0, 1)).all():
            raise ValueError("label must be binary")

    @property
    def seq_len(self) -> int:
        return len(self.images)


def image_to_array(img: Image.Image) -> np.ndarray:
    rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))


def array_to_image(arr: np.ndarray) -> Image.Image:
    a = np.clip(np.asarray(arr), 0.0, 1.0)
    u8 = np.round(a * 255.0).astype(np.uint8).transpose(1, 2, 0)
    return Image.fromarray(u8, mode="RGB")


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return image_to_array(img)


def save_image(path, arr: np.ndarray) -> None:
    array_to_image(arr).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with Image.open(path) as img:
        return (np.asarray(img.convert("L")) >= 128).astype(np.uint8)


def save_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(
        path, format="PNG")


def save_scene(scene_dir, sample: SequenceSample) -> None:
    sample.validate()
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    for t, img in enumerate(sample.images):
        save_image(scene_dir / f"img_t{t}.png", img)
    save_mask(scene_dir / "label.png", sample.label)
    meta = dict(sample.meta)
    meta["dates"] = list(sample.dates)
    with open(scene_dir / "meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_scene(scene_dir) -> SequenceSample:
    scene_dir = Path(scene_dir)
    paths = sorted(scene_dir.glob("img_t*.png"),
                   key=lambda p: int(p.stem.split("img_t")[1]))
    if not paths:
        raise FileNotFoundError(f"no img_t*.png under {scene_dir}")
    images = [load_image(p) for p in paths]
    label = load_mask(scene_dir / "label.png")
    meta = {}
    meta_path = scene_dir / "meta.json"
    if meta_path.exists():
        with open(meta_path) as f:
            meta = json.load(f)
    dates = meta.get("dates", [f"t{t}" for t in range(len(images))])
    sample = SequenceSample(images=images, label=label, dates=dates, meta=meta)
    sample.validate()
    return sample


def list_scene_dirs(root, split: str) -> list[Path]:
    base = Path(root) / split
    if not base.is_dir():
        return []
    return sorted(p for p in base.iterdir() if p.is_dir())


def load_split(root, split: str) -> list[SequenceSample]:
    return [load_scene(p) for p in list_scene_dirs(root, split)]


def compute_channel_stats(samples: list[SequenceSample]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over every image of every sample (training set)."""
    if not samples:
        raise ValueError("cannot compute statistics of an empty set")
    acc = np.zeros(3, dtype=np.float64)
    acc2 = np.zeros(3, dtype=np.float64)
    count = 0
    for s in samples:
        for img in s.images:
            acc += img.sum(axis=(1, 2), dtype=np.float64)
            acc2 += (img.astype(np.float64) ** 2).sum(axis=(1, 2))
            count += img.shape[1] * img.shape[2]
    mean = acc / count
    var = np.maximum(acc2 / count - mean ** 2, 1e-12)
    return mean.astype(np.float32), np.sqrt(var).astype(np.float32)


def normalize_image(img: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return ((img - mean[:, None, None]) / std[:, None, None]).astype(np.float32)
