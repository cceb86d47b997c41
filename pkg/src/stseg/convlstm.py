"""Peephole convolutional LSTM and the stacked temporal fusion model.

Gate pre-activations are same-padded convolutions of the current input and
previous hidden state; peephole terms multiply the memory cell elementwise
with per-channel weights (optionally full per-element maps).  The fusion
model stacks two cells, runs them over the probability-map sequence, and maps
the last hidden state through a 1x1 convolution and an elementwise sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import nn
from .params import ParamStore, he_normal
from .tensor import Tensor, add, mul, sigmoid, tanh

GATES = ("i", "f", "c", "o")


@dataclass
class ConvLstmConfig:
    input_channels: int = 2    # probability-map channels feeding layer 0
    hidden_filters: int = 32
    kernel: int = 3
    layers: int = 2
    num_classes: int = 2       # head output channels
    peephole: str = "per-channel"     # or "per-element" (fixed spatial size)
    o_peephole_state: str = "prev"    # gate o sees c_{t-1}; "current" uses c_t
    # project every layer's hidden sequence back to num_classes channels
    # before the next layer (otherwise the next layer consumes all filters)
    interlayer_projection: bool = False
    spatial: Optional[tuple[int, int]] = None  # required for per-element peepholes

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd for same-padded gates")
        if self.hidden_filters < 1 or self.layers < 1:
            raise ValueError("hidden_filters and layers must be >= 1")
        if self.peephole not in ("per-channel", "per-element"):
            raise ValueError(f"unknown peephole mode {self.peephole!r}")
        if self.peephole == "per-element" and self.spatial is None:
            raise ValueError("per-element peepholes need a fixed spatial size")
        if self.o_peephole_state not in ("prev", "current"):
            raise ValueError(f"unknown o_peephole_state {self.o_peephole_state!r}")

    def layer_input_channels(self, layer: int) -> int:
        if layer == 0:
            return self.input_channels
        return self.num_classes if self.interlayer_projection else self.hidden_filters


@dataclass
class ConvLstmState:
    h: Tensor
    c: Tensor

    @staticmethod
    def zeros(batch: int, filters: int, height: int, width: int,
              dtype=None) -> "ConvLstmState":
        shape = (batch, filters, height, width)
        return ConvLstmState(h=Tensor.zeros(shape, dtype=dtype),
                             c=Tensor.zeros(shape, dtype=dtype))


def convlstm_init(cfg: ConvLstmConfig, seed: int) -> ParamStore:
    """He-normal gate kernels, zero peepholes, zero biases except the forget
    bias at one (gates start open so early gradients flow through time)."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    r, k = cfg.hidden_filters, cfg.kernel
    if cfg.peephole == "per-element":
        peep_shape: tuple = (r,) + tuple(cfg.spatial)
    else:
        peep_shape = (r,)
    for layer in range(cfg.layers):
        d = cfg.layer_input_channels(layer)
        p = f"rnn.l{layer}"
        for gate in GATES:
            store.add(f"{p}.W_x{gate}", he_normal(rng, (r, d, k, k), d * k * k))
            store.add(f"{p}.W_h{gate}", he_normal(rng, (r, r, k, k), r * k * k))
        for gate in ("i", "f", "o"):
            store.add(f"{p}.W_c{gate}", np.zeros(peep_shape))
        for gate in GATES:
            bias = np.ones(r) if gate == "f" else np.zeros(r)
            store.add(f"{p}.b_{gate}", bias)
        if cfg.interlayer_projection and layer < cfg.layers - 1:
            store.add(f"proj.l{layer}.weight",
                      he_normal(rng, (cfg.num_classes, r, 1, 1), r))
            store.add(f"proj.l{layer}.bias", np.zeros(cfg.num_classes))
    store.add("head.weight", he_normal(rng, (cfg.num_classes, r, 1, 1), r))
    store.add("head.bias", np.zeros(cfg.num_classes))
    return store


def _gate_pre(x: Tensor, h: Tensor, store: ParamStore, prefix: str, gate: str,
              zero_bias: Tensor, peep_cell: Optional[Tensor]) -> Tensor:
    pre = nn.conv2d_same(x, store[f"{prefix}.W_x{gate}"], store[f"{prefix}.b_{gate}"])
    pre = add(pre, nn.conv2d_same(h, store[f"{prefix}.W_h{gate}"], zero_bias))
    if peep_cell is not None:
        pre = add(pre, mul(peep_cell, store[f"{prefix}.W_c{gate}"]))
    return pre


def convlstm_cell(x: Tensor, state: ConvLstmState, store: ParamStore,
                  cfg: ConvLstmConfig, layer: int = 0,
                  gate_overrides: Optional[dict] = None,
                  gates_out: Optional[dict] = None) -> ConvLstmState:
    """One recurrence step.

    i = sig(Wxi*x + Whi*h + Wci.c_prev + bi)
    f = sig(Wxf*x + Whf*h + Wcf.c_prev + bf)
    c = f.c_prev + i.tanh(Wxc*x + Whc*h + bc)
    o = sig(Wxo*x + Who*h + Wco.c_peep + bo)   c_peep per cfg.o_peephole_state
    h = o.tanh(c)

    gate_overrides maps gate names ("i", "f", "o") to constants, replacing the
    computed gate; the memory-conservation probe uses {"f": 1.0, "i": 0.0}.
    ``gates_out`` collects the gate activations when given.
    """
    if x.shape[1] != cfg.layer_input_channels(layer):
        raise ValueError(f"layer {layer} expects {cfg.layer_input_channels(layer)} "
                         f"input channels, got {x.shape[1]}")
    if state.h.shape != (x.shape[0], cfg.hidden_filters, x.shape[2], x.shape[3]):
        raise ValueError(f"state shape {state.h.shape} does not match input {x.shape}")
    if not np.isfinite(state.c.data).all():
        raise ValueError("non-finite memory cell state")
    prefix = f"rnn.l{layer}"
    h_prev, c_prev = state.h, state.c
    zero_bias = Tensor.zeros(cfg.hidden_filters, dtype=x.dtype)
    overrides = gate_overrides or {}

    def gate(name: str, peep: Optional[Tensor]) -> Tensor:
        if name in overrides:
            return Tensor(np.full(h_prev.shape, overrides[name]), dtype=x.dtype)
        return sigmoid(_gate_pre(x, h_prev, store, prefix, name, zero_bias, peep))

    i_t = gate("i", c_prev)
    f_t = gate("f", c_prev)
    g_t = tanh(_gate_pre(x, h_prev, store, prefix, "c", zero_bias, None))
    c_t = add(mul(f_t, c_prev), mul(i_t, g_t))
    o_peep = c_prev if cfg.o_peephole_state == "prev" else c_t
    o_t = gate("o", o_peep)
    h_t = mul(o_t, tanh(c_t))
    if gates_out is not None:
        gates_out.update(i=i_t.data, f=f_t.data, o=o_t.data)
    return ConvLstmState(h=h_t, c=c_t)


def temporal_forward(seq: Sequence[Tensor] | np.ndarray, store: ParamStore,
                     cfg: ConvLstmConfig,
                     gate_overrides: Optional[dict] = None) -> Tensor:
    """Fuses a probability-map sequence into one map in (0,1)^classes.

    ``seq`` is either [B,T,C,H,W] or a list of T tensors [B,C,H,W]; states
    start at zero, each layer consumes the previous layer's hidden sequence,
    and the last hidden state passes through the 1x1 head and a sigmoid.
    """
    if isinstance(seq, np.ndarray):
        if seq.ndim != 5:
            raise ValueError("array input must be [B,T,C,H,W]")
        steps: list[Tensor] = [Tensor(np.ascontiguousarray(seq[:, t]))
                               for t in range(seq.shape[1])]
    else:
        steps = [x if isinstance(x, Tensor) else Tensor(x) for x in seq]
    if len(steps) == 0:
        raise ValueError("empty sequence")
    B, C, H, W = steps[0].shape
    if C != cfg.input_channels:
        raise ValueError(f"expected {cfg.input_channels} channels, got {C}")

    inputs = steps
    for layer in range(cfg.layers):
        state = ConvLstmState.zeros(B, cfg.hidden_filters, H, W, dtype=steps[0].dtype)
        hidden: list[Tensor] = []
        for x_t in inputs:
            state = convlstm_cell(x_t, state, store, cfg, layer=layer,
                                  gate_overrides=gate_overrides)
            hidden.append(state.h)
        if cfg.interlayer_projection and layer < cfg.layers - 1:
            inputs = [nn.conv2d(h, store[f"proj.l{layer}.weight"],
                                store[f"proj.l{layer}.bias"]) for h in hidden]
        else:
            inputs = hidden
    out = nn.conv2d(inputs[-1], store["head.weight"], store["head.bias"])
    return sigmoid(out)


def convlstm_apply(pmaps: np.ndarray, store: ParamStore,
                   cfg: ConvLstmConfig) -> np.ndarray:
    """Plain-array fusion; accepts [T,C,H,W] or [B,T,C,H,W]."""
    single = pmaps.ndim == 4
    arr = pmaps[None] if single else pmaps
    fused = temporal_forward(arr.astype(np.float32, copy=False), store, cfg).data
    return fused[0] if single else fused
