#!/usr/bin/env python3
"""Timing comparison of the compiled kernels against the numpy fallback.

Runs the hot operations (convolution forward/backward, transposed
convolution, max pooling) on training-representative shapes with both
backends and prints a table with the speedup.

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from stseg.kernels import HAVE_NATIVE, _numpy as knp

if HAVE_NATIVE:
    from stseg.kernels import _native as knat

CASES = [
    # (label, B, Cin, Cout, H, W, k, stride, pad)
    ("unet_enc0", 4, 8, 8, 128, 128, 3, 1, 1),
    ("unet_enc2", 4, 32, 32, 32, 32, 3, 1, 1),
    ("rnn_gate", 4, 8, 8, 128, 128, 3, 1, 1),
    ("head_1x1", 4, 8, 2, 128, 128, 1, 1, 0),
]


def time_fn(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(label, B, Cin, Cout, H, W, k, stride, pad, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((B, Cin, H, W)).astype(np.float32)
    w = rng.standard_normal((Cout, Cin, k, k)).astype(np.float32)
    b = np.zeros(Cout, dtype=np.float32)
    out = knp.conv2d_forward(x, w, b, stride, pad)
    dout = rng.standard_normal(out.shape).astype(np.float32)

    rows = []
    t_np = time_fn(lambda: knp.conv2d_forward(x, w, b, stride, pad), repeats)
    t_np_b = time_fn(lambda: knp.conv2d_backward(x, w, dout, stride, pad), repeats)
    if HAVE_NATIVE:
        t_nat = time_fn(lambda: knat.conv2d_forward(x, w, b, stride, pad, 1),
                        repeats)
        t_nat_b = time_fn(
            lambda: knat.conv2d_backward(x, w, dout, stride, pad, True, True, 1),
            repeats)
        rows.append((f"{label} fwd", t_np, t_nat))
        rows.append((f"{label} bwd", t_np_b, t_nat_b))
    else:
        rows.append((f"{label} fwd", t_np, None))
        rows.append((f"{label} bwd", t_np_b, None))
    return rows


def bench_pool(repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 16, 128, 128)).astype(np.float32)
    rows = []
    t_np = time_fn(lambda: knp.maxpool2x2_forward(x), repeats)
    t_nat = (time_fn(lambda: knat.maxpool2x2_forward(x, 1), repeats)
             if HAVE_NATIVE else None)
    rows.append(("maxpool fwd", t_np, t_nat))
    return rows


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    print(f"native extension available: {HAVE_NATIVE}")
    rows = []
    for case in CASES:
        rows.extend(bench_case(*case, repeats=args.repeats))
    rows.extend(bench_pool(args.repeats))

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'numpy':>10}  {'native':>10}  {'speedup':>8}")
    for label, t_np, t_nat in rows:
        if t_nat is None:
            print(f"{label:<{width}}  {t_np * 1e3:>8.2f}ms  {'-':>10}  {'-':>8}")
        else:
            print(f"{label:<{width}}  {t_np * 1e3:>8.2f}ms  {t_nat * 1e3:>8.2f}ms"
                  f"  {t_np / t_nat:>7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
