"""Encoder-decoder segmentation network producing per-pixel class probability
maps (PMaps).

Four-level contracting path of double 3x3 conv blocks (conv -> batchnorm ->
ReLU) with 2x2 max pooling, channel width doubling per level and starting at
half the classic 64 filters; expanding path of 2x2 transposed convolutions
that halve the channels, skip concatenation, and a single 3x3 conv block per
level; 1x1 conv head with per-pixel softmax over classes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nn
from .params import ParamStore, he_normal
from .tensor import Tensor


@dataclass
class UNetConfig:
    in_channels: int = 3
    base_filters: int = 32
    depth: int = 4
    num_classes: int = 2
    # the classic design uses two convs per decoder level; default here is one
    double_decoder_convs: bool = False

    def __post_init__(self):
        if self.base_filters < 1 or self.depth < 1:
            raise ValueError("base_filters and depth must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    def filters_at(self, level: int) -> int:
        return self.base_filters * (1 << level)

    def layer_specs(self) -> list[tuple[str, str, int, int, int]]:
        """Flat (name, kind, Cin, Cout, k) list in construction order.

        kind is "conv", "convT" or "bn"; the list drives both initialization
        and the independent parameter-count tally in the tests.
        """
        specs: list[tuple[str, str, int, int, int]] = []

        def conv_block(prefix: str, j: int, cin: int, cout: int):
            specs.append((f"{prefix}.conv{j}", "conv", cin, cout, 3))
            specs.append((f"{prefix}.bn{j}", "bn", cout, cout, 0))

        cin = self.in_channels
        for i in range(self.depth):
            f = self.filters_at(i)
            conv_block(f"enc{i}", 0, cin, f)
            conv_block(f"enc{i}", 1, f, f)
            cin = f
        fb = self.filters_at(self.depth)
        conv_block("bottleneck", 0, cin, fb)
        conv_block("bottleneck", 1, fb, fb)
        for i in reversed(range(self.depth)):
            f = self.filters_at(i)
            specs.append((f"dec{i}.up", "convT", self.filters_at(i + 1), f, 2))
            conv_block(f"dec{i}", 0, 2 * f, f)
            if self.double_decoder_convs:
                conv_block(f"dec{i}", 1, f, f)
        specs.append(("head", "conv", self.filters_at(0), self.num_classes, 1))
        return specs


def unet_init(cfg: UNetConfig, seed: int) -> ParamStore:
    """He-normal conv weights, zero biases, unit-gamma batch norm."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name, kind, cin, cout, k in cfg.layer_specs():
        if kind in ("conv", "convT"):
            fan_in = cin * k * k
            store.add(f"{name}.weight", he_normal(rng, (cout, cin, k, k), fan_in))
            store.add(f"{name}.bias", np.zeros(cout))
        else:
            store.add(f"{name}.gamma", np.ones(cout))
            store.add(f"{name}.beta", np.zeros(cout))
            store.add(f"{name}.running_mean", np.zeros(cout), trainable=False)
            store.add(f"{name}.running_var", np.ones(cout), trainable=False)
    return store


def _bn(store: ParamStore, name: str) -> nn.BatchNormParams:
    return nn.BatchNormParams(
        gamma=store[f"{name}.gamma"], beta=store[f"{name}.beta"],
        running_mean=store[f"{name}.running_mean"],
        running_var=store[f"{name}.running_var"])


def _conv_bn_relu(x: Tensor, store: ParamStore, name: str, j: int, training: bool) -> Tensor:
    from .tensor import relu
    h = nn.conv2d_same(x, store[f"{name}.conv{j}.weight"], store[f"{name}.conv{j}.bias"])
    h = nn.batchnorm2d(h, _bn(store, f"{name}.bn{j}"), training)
    return relu(h)


def unet_forward(x: Tensor, store: ParamStore, cfg: UNetConfig,
                 mode: str = "eval", features_out: Optional[dict] = None) -> Tensor:
    """Full forward pass, returning the PMap tensor [B, classes, H, W].

    The probability map has the input's spatial size; every pixel's channel
    vector sums to one (softmax head).  ``features_out``, when given, collects
    named intermediates (currently the bottleneck feature map).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    training = mode == "train"
    if x.ndim != 4:
        raise ValueError("unet_forward expects [B,C,H,W]")
    B, C, H, W = x.shape
    if C != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels} input channels, got {C}")
    div = 1 << cfg.depth
    if H % div or W % div:
        raise ValueError(f"spatial extents must be divisible by {div}, got {H}x{W}")

    skips: list[Tensor] = []
    h = x
    for i in range(cfg.depth):
        h = _conv_bn_relu(h, store, f"enc{i}", 0, training)
        h = _conv_bn_relu(h, store, f"enc{i}", 1, training)
        skips.append(h)
        h = nn.maxpool2x2(h)
    h = _conv_bn_relu(h, store, "bottleneck", 0, training)
    h = _conv_bn_relu(h, store, "bottleneck", 1, training)
    if features_out is not None:
        features_out["bottleneck"] = h
    for i in reversed(range(cfg.depth)):
        h = nn.conv_transpose2d(h, store[f"dec{i}.up.weight"], store[f"dec{i}.up.bias"])
        h = nn.concat_channels(skips[i], h)
        h = _conv_bn_relu(h, store, f"dec{i}", 0, training)
        if cfg.double_decoder_convs:
            h = _conv_bn_relu(h, store, f"dec{i}", 1, training)
    h = nn.conv2d(h, store["head.weight"], store["head.bias"])
    return nn.softmax_channels(h)


def unet_apply(images: np.ndarray, store: ParamStore, cfg: UNetConfig) -> np.ndarray:
    """Eval-mode forward on plain arrays; accepts [3,H,W] or [B,3,H,W]."""
    single = images.ndim == 3
    arr = images[None] if single else images
    probs = unet_forward(Tensor(arr, dtype=np.float32), store, cfg, mode="eval").data
    return probs[0] if single else probs
