#!/usr/bin/env python3
"""Regenerates tests/fixtures: frozen oracle outputs for the layer kernels.

Inputs are random but seeded; expected outputs come from the brute-force
oracles in oracles.py, computed in float64 and stored as tensor files next to
a manifest describing each case.  Run from the repository root:

    python3 tests/make_fixtures.py
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

import oracles
from stseg import tensorio

FIXTURE_DIR = Path(__file__).parent / "fixtures"


def main() -> int:
    rng = np.random.default_rng(8721)
    FIXTURE_DIR.mkdir(exist_ok=True)
    manifest = []

    def save(name, arr):
        tensorio.save_tensor(FIXTURE_DIR / name, np.asarray(arr, dtype=np.float64))
        return name

    for i, (stride, pad) in enumerate([(1, 1), (2, 0)]):
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        manifest.append({
            "op": "conv2d",
            "inputs": [save(f"conv2d_{i}_x.stt1", x),
                       save(f"conv2d_{i}_w.stt1", w),
                       save(f"conv2d_{i}_b.stt1", b)],
            "kwargs": {"stride": stride, "padding": pad},
            "expected": save(f"conv2d_{i}_out.stt1",
                             oracles.conv2d_oracle(x, w, b, stride, pad)),
            "tolerance": 1e-12,
        })

    x = rng.standard_normal((1, 3, 4, 4))
    w = rng.standard_normal((2, 3, 2, 2))
    b = rng.standard_normal(2)
    manifest.append({
        "op": "conv_transpose2d",
        "inputs": [save("convt_x.stt1", x), save("convt_w.stt1", w),
                   save("convt_b.stt1", b)],
        "kwargs": {},
        "expected": save("convt_out.stt1",
                         oracles.conv_transpose2x2_oracle(x, w, b)),
        "tolerance": 1e-12,
    })

    x = rng.standard_normal((2, 2, 6, 6))
    out, _ = oracles.maxpool2x2_oracle(x)
    manifest.append({
        "op": "maxpool2x2",
        "inputs": [save("pool_x.stt1", x)],
        "kwargs": {},
        "expected": save("pool_out.stt1", out),
        "tolerance": 0.0,
    })

    x = rng.standard_normal((2, 3, 4, 4))
    gamma = rng.uniform(0.5, 1.5, 3)
    beta = rng.standard_normal(3)
    manifest.append({
        "op": "batchnorm2d_train",
        "inputs": [save("bn_x.stt1", x), save("bn_gamma.stt1", gamma),
                   save("bn_beta.stt1", beta)],
        "kwargs": {"epsilon": 1e-5},
        "expected": save("bn_out.stt1",
                         oracles.batchnorm_train_oracle(x, gamma, beta, 1e-5)),
        "tolerance": 1e-10,
    })

    with open(FIXTURE_DIR / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    print(f"wrote {len(manifest)} cases under {FIXTURE_DIR}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
