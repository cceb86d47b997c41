"""Vectorized numpy implementations of the hot kernels.

Fallback backend used when the compiled extension is unavailable (or forced
via ``STSEG_BACKEND=numpy``).  Convolutions accumulate one kernel tap at a
time over strided views, which keeps memory flat and stays deterministic for
a fixed build.  The ``threads`` argument exists for signature parity with the
native backend and is ignored here.
"""

from __future__ import annotations

import numpy as np


def _conv_out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray,
                   stride: int, pad: int, threads: int = 1) -> np.ndarray:
    B, Cin, H, W = x.shape
    Cout, _, k, _ = w.shape
    Ho = _conv_out_extent(H, k, stride, pad)
    Wo = _conv_out_extent(W, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.empty((B, Cout, Ho, Wo), dtype=x.dtype)
    out[:] = bias[None, :, None, None]
    for u in range(k):
        for v in range(k):
            xs = xp[:, :, u:u + stride * Ho:stride, v:v + stride * Wo:stride]
            # [B,Cin,Ho,Wo] x [Cout,Cin] summed over Cin
            out += np.einsum("oc,bchw->bohw", w[:, :, u, v], xs, optimize=True)
    return out


def conv2d_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray,
                    stride: int, pad: int,
                    need_dx: bool = True, need_dw: bool = True,
                    threads: int = 1):
    B, Cin, H, W = x.shape
    Cout, _, k, _ = w.shape
    Ho, Wo = dout.shape[2], dout.shape[3]
    db = dout.sum(axis=(0, 2, 3))

    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    dw = None
    if need_dw:
        dw = np.empty_like(w)
        for u in range(k):
            for v in range(k):
                xs = xp[:, :, u:u + stride * Ho:stride, v:v + stride * Wo:stride]
                dw[:, :, u, v] = np.einsum("bohw,bchw->oc", dout, xs, optimize=True)

    dx = None
    if need_dx:
        dxp = np.zeros_like(xp)
        for u in range(k):
            for v in range(k):
                contrib = np.einsum("oc,bohw->bchw", w[:, :, u, v], dout, optimize=True)
                dxp[:, :, u:u + stride * Ho:stride, v:v + stride * Wo:stride] += contrib
        dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
        dx = np.ascontiguousarray(dx)
    return dx, dw, db


def convt2x2_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray,
                     threads: int = 1) -> np.ndarray:
    """Transposed conv, kernel 2, stride 2: disjoint 2x2 stamps, exact 2x upsampling."""
    B, Cin, H, W = x.shape
    Cout = w.shape[0]
    out = np.empty((B, Cout, 2 * H, 2 * W), dtype=x.dtype)
    for u in range(2):
        for v in range(2):
            stamp = np.einsum("oc,bchw->bohw", w[:, :, u, v], x, optimize=True)
            out[:, :, u::2, v::2] = stamp + bias[None, :, None, None]
    return out


def convt2x2_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray,
                      threads: int = 1):
    db = dout.sum(axis=(0, 2, 3))
    dx = np.zeros_like(x)
    dw = np.empty_like(w)
    for u in range(2):
        for v in range(2):
            dslice = dout[:, :, u::2, v::2]
            dx += np.einsum("oc,bohw->bchw", w[:, :, u, v], dslice, optimize=True)
            dw[:, :, u, v] = np.einsum("bohw,bchw->oc", dslice, x, optimize=True)
    return dx, dw, db


def _pool_windows(x: np.ndarray) -> np.ndarray:
    B, C, H, W = x.shape
    # window elements ordered row-major: (0,0),(0,1),(1,0),(1,1)
    v = x.reshape(B, C, H // 2, 2, W // 2, 2)
    return np.ascontiguousarray(v.transpose(0, 1, 2, 4, 3, 5)).reshape(
        B, C, H // 2, W // 2, 4)


def maxpool2x2_forward(x: np.ndarray, threads: int = 1):
    win = _pool_windows(x)
    idx = win.argmax(axis=-1).astype(np.uint8)  # first max wins on ties
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(idx: np.ndarray, dout: np.ndarray, threads: int = 1) -> np.ndarray:
    B, C, Ho, Wo = dout.shape
    dwin = np.zeros((B, C, Ho, Wo, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    dx = dwin.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx).reshape(B, C, 2 * Ho, 2 * Wo)
