"""Neural network layers on top of the tensor tape: 2-d convolution,
transposed convolution, 2x2 max pooling, batch normalization, channel
concatenation, and the per-pixel channel softmax."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import Tensor


@dataclass
class Conv2dParams:
    """Kernel + bias + geometry of one convolution.

    weight: [Cout, Cin, k, k], bias: [Cout].  "Same" mode needs odd k with
    padding (k - 1) / 2 at stride 1.
    """
    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor   # buffer, updated in train mode
    running_var: Tensor    # buffer, updated in train mode
    momentum: float = 0.9  # running = momentum * running + (1 - momentum) * batch
    epsilon: float = 1e-5


def conv2d(x: Tensor, weight: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects x [B,Cin,H,W] and weight [Cout,Cin,k,k]")
    B, Cin, H, W = x.shape
    Cout, wcin, k, k2 = weight.shape
    if k != k2:
        raise ValueError("conv2d kernels must be square")
    if wcin != Cin:
        raise ValueError(f"channel mismatch: input has {Cin}, weight expects {wcin}")
    if (H + 2 * padding - k) // stride + 1 < 1 or (W + 2 * padding - k) // stride + 1 < 1:
        raise ValueError("conv2d output extent < 1")
    out = kernels.conv2d_forward(x.data, weight.data, bias.data, stride, padding)

    def bwd(g):
        dx, dw, db = kernels.conv2d_backward(
            x.data, weight.data, g, stride, padding,
            need_dx=x.requires_grad, need_dw=weight.requires_grad)
        if x.requires_grad:
            x.accumulate_grad(dx)
        if weight.requires_grad:
            weight.accumulate_grad(dw)
        if bias.requires_grad:
            bias.accumulate_grad(db)

    return Tensor._from_op(out, (x, weight, bias), bwd)


def conv2d_same(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    k = weight.shape[2]
    if k % 2 == 0:
        raise ValueError("same-padding needs an odd kernel")
    return conv2d(x, weight, bias, stride=1, padding=(k - 1) // 2)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-2 transposed conv with a 2x2 kernel: every input pixel scatters
    one weighted 2x2 stamp, so spatial extents exactly double."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv_transpose2d expects 4-d input and weight")
    Cout, wcin, kh, kw = weight.shape
    if (kh, kw) != (2, 2):
        raise ValueError("conv_transpose2d is fixed to 2x2 kernels")
    if wcin != x.shape[1]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weight expects {wcin}")
    out = kernels.convt2x2_forward(x.data, weight.data, bias.data)

    def bwd(g):
        dx, dw, db = kernels.convt2x2_backward(x.data, weight.data, g)
        if x.requires_grad:
            x.accumulate_grad(dx)
        if weight.requires_grad:
            weight.accumulate_grad(dw)
        if bias.requires_grad:
            bias.accumulate_grad(db)

    return Tensor._from_op(out, (x, weight, bias), bwd)


def maxpool2x2(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2x2 needs even extents, got {H}x{W}")
    out, idx = kernels.maxpool2x2_forward(x.data)

    def bwd(g):
        x.accumulate_grad(kernels.maxpool2x2_backward(idx, g))

    return Tensor._from_op(out, (x,), bwd)


def batchnorm2d(x: Tensor, p: BatchNormParams, training: bool) -> Tensor:
    B, C, H, W = x.shape
    n = B * H * W
    if training and n < 2:
        raise ValueError("batchnorm train mode needs at least 2 values per channel")

    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))  # biased, matches the normalizer
        m = p.momentum
        p.running_mean.data = (m * p.running_mean.data
                               + (1.0 - m) * mean).astype(x.dtype)
        p.running_var.data = (m * p.running_var.data
                              + (1.0 - m) * var).astype(x.dtype)
    else:
        mean = p.running_mean.data
        var = p.running_var.data

    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = p.gamma.data[None, :, None, None] * xhat + p.beta.data[None, :, None, None]
    gamma, beta = p.gamma, p.beta

    def bwd(g):
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
                dx = (inv_std[None, :, None, None] / n) * (n * dxhat - s1 - xhat * s2)
            else:
                dx = dxhat * inv_std[None, :, None, None]
            x.accumulate_grad(np.ascontiguousarray(dx.astype(x.dtype, copy=False)))

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 4 or b.ndim != 4:
        raise ValueError("concat_channels expects [B,C,H,W] operands")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"batch/spatial mismatch: {a.shape} vs {b.shape}")
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ValueError("concat_channels forbids zero-channel operands")
    c1 = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.ascontiguousarray(g[:, :c1]))
        if b.requires_grad:
            b.accumulate_grad(np.ascontiguousarray(g[:, c1:]))

    return Tensor._from_op(out, (a, b), bwd)


def split_channels(t: Tensor, c1: int) -> tuple[Tensor, Tensor]:
    """Inverse of concat_channels on values (no tape)."""
    return (Tensor(t.data[:, :c1].copy(), dtype=t.dtype),
            Tensor(t.data[:, c1:].copy(), dtype=t.dtype))


def softmax_channels(x: Tensor) -> Tensor:
    """Per-pixel softmax across the channel axis of [B,C,H,W]."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * probs).sum(axis=1, keepdims=True)
        x.accumulate_grad(probs * (g - dot))

    return Tensor._from_op(probs, (x,), bwd)
