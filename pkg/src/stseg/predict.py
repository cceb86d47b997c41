"""Whole-raster inference: overlap-tiled application of the networks plus the
date-disagreement composite.

Tiles are padded up to the network's divisibility requirement, mapped,
cropped back, and stitched with nearest-center selection, so an identity
network round-trips any raster bit-exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import dataset as ds
from . import tensorio
from .convlstm import ConvLstmConfig, convlstm_apply
from .losses import probs_to_mask
from .params import ParamStore
from .tiling import tile_plan, stitch
from .unet import UNetConfig, unet_apply


def pad_to_multiple(img: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Zero-pads the trailing spatial axes up to the next multiple."""
    h, w = img.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img, (h, w)
    pad = [(0, 0)] * (img.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(img, pad), (h, w)


def tiled_apply(fn: Callable[[list[np.ndarray]], np.ndarray],
                images: Sequence[np.ndarray], tile: int, overlap: int,
                multiple: int = 1, out_channels: int = 2) -> np.ndarray:
    """Applies ``fn`` (list of per-date [C,h,w] crops -> [out_channels,h,w])
    over an overlapping tile grid and stitches the results."""
    h, w = images[0].shape[-2:]
    grid = tile_plan(h, w, tile=tile, overlap=overlap)
    tiles = []
    for r, c in grid.origins:
        crops = [np.ascontiguousarray(img[:, r:r + grid.tile_h, c:c + grid.tile_w])
                 for img in images]
        padded, (th, tw) = pad_to_multiple(np.stack(crops), multiple)
        out = fn(list(padded))
        tiles.append(np.ascontiguousarray(out[:, :th, :tw]))
    return stitch(tiles, grid)


def fcn_tiled(image: np.ndarray, store: ParamStore, cfg: UNetConfig,
              mean: np.ndarray, std: np.ndarray, tile: int, overlap: int) -> np.ndarray:
    normed = ds.normalize_image(image, mean, std)

    def fn(crops: list[np.ndarray]) -> np.ndarray:
        return unet_apply(crops[0], store, cfg)

    return tiled_apply(fn, [normed], tile, overlap,
                       multiple=1 << cfg.depth, out_channels=cfg.num_classes)


def fused_tiled(images: Sequence[np.ndarray], fcn_store: ParamStore,
                fcn_cfg: UNetConfig, mean: np.ndarray, std: np.ndarray,
                rnn_store: ParamStore, rnn_cfg: ConvLstmConfig,
                tile: int, overlap: int) -> np.ndarray:
    normed = [ds.normalize_image(img, mean, std) for img in images]

    def fn(crops: list[np.ndarray]) -> np.ndarray:
        pmaps = np.stack([unet_apply(c, fcn_store, fcn_cfg) for c in crops])
        return convlstm_apply(pmaps, rnn_store, rnn_cfg)

    return tiled_apply(fn, normed, tile, overlap,
                       multiple=1 << fcn_cfg.depth, out_channels=rnn_cfg.num_classes)


def composite_rgb(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Per-date road masks -> [H,W,3] composite: date 0 red, 1 green, 2 blue;
    white marks pixels all three dates call road."""
    if len(masks) != 3:
        raise ValueError("composite needs exactly 3 date masks")
    chans = [(np.asarray(m) > 0).astype(np.uint8) * 255 for m in masks]
    return np.stack(chans, axis=-1)


def run_prediction(fcn_ckpt, image_paths: Sequence, out_dir,
                   rnn_ckpt=None, tile: int = 2048, overlap: int = 512,
                   threshold: float = 0.5) -> dict:
    """Writes the probability map (tensor file), the thresholded road mask
    (PNG), and, for 3-date inputs, the per-date disagreement composite."""
    from .train import load_fcn_checkpoint, load_rnn_checkpoint
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store, cfg, mean, std = load_fcn_checkpoint(fcn_ckpt)
    images = [ds.load_image(p) for p in image_paths]
    extents = {img.shape[1:] for img in images}
    if len(extents) != 1:
        raise ValueError(f"image extents differ across dates: {sorted(extents)}")

    date_probs = [fcn_tiled(img, store, cfg, mean, std, tile, overlap)
                  for img in images]
    date_masks = [probs_to_mask(p, threshold) for p in date_probs]

    if rnn_ckpt is not None:
        rnn_store, rnn_cfg = load_rnn_checkpoint(rnn_ckpt)
        if len(images) < 1:
            raise ValueError("fused prediction needs at least one image")
        probs = fused_tiled(images, store, cfg, mean, std, rnn_store, rnn_cfg,
                            tile, overlap)
    else:
        if len(images) != 1:
            raise ValueError("single-image prediction takes exactly one image "
                             "(pass --ckpt-rnn to fuse a sequence)")
        probs = date_probs[0]

    mask = probs_to_mask(probs, threshold)
    tensorio.save_tensor(out_dir / "pmap.stt1", probs.astype(np.float32))
    ds.save_mask(out_dir / "mask.png", mask)
    outputs = {"pmap": str(out_dir / "pmap.stt1"), "mask": str(out_dir / "mask.png")}
    if len(date_masks) == 3:
        comp = composite_rgb(date_masks)
        Image.fromarray(comp, mode="RGB").save(out_dir / "composite.png", format="PNG")
        outputs["composite"] = str(out_dir / "composite.png")
    return outputs
