"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy implementation
is the fallback.  ``STSEG_BACKEND`` forces a choice ("native" or "numpy"),
``STSEG_THREADS`` caps the native kernels' thread count.  Both backends write
every output element from exactly one sequential computation, so results do
not depend on the thread count.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy as numpy_backend

try:
    from . import _native as native_backend
except ImportError:  # extension not built: pure fallback
    native_backend = None

HAVE_NATIVE = native_backend is not None

_requested = os.environ.get("STSEG_BACKEND", "auto").strip().lower()
if _requested in ("", "auto"):
    BACKEND = "native" if HAVE_NATIVE else "numpy"
elif _requested in ("native", "cython"):
    if not HAVE_NATIVE:
        raise ImportError("STSEG_BACKEND=native but the compiled extension is unavailable")
    BACKEND = "native"
elif _requested in ("numpy", "python", "py"):
    BACKEND = "numpy"
else:
    raise ValueError(f"unknown STSEG_BACKEND={_requested!r}")

_impl = native_backend if BACKEND == "native" else numpy_backend


def _default_threads() -> int:
    env = os.environ.get("STSEG_THREADS", "").strip()
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("STSEG_THREADS must be >= 1")
        return n
    return min(os.cpu_count() or 1, 8)


_num_threads = _default_threads()


def set_num_threads(n: int) -> None:
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = n


def get_num_threads() -> int:
    return _num_threads


def _prep(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


def conv2d_forward(x, w, bias, stride: int, pad: int) -> np.ndarray:
    return _impl.conv2d_forward(_prep(x), _prep(w), _prep(bias), stride, pad,
                                _num_threads)


def conv2d_backward(x, w, dout, stride: int, pad: int,
                    need_dx: bool = True, need_dw: bool = True):
    return _impl.conv2d_backward(_prep(x), _prep(w), _prep(dout), stride, pad,
                                 need_dx, need_dw, _num_threads)


def convt2x2_forward(x, w, bias) -> np.ndarray:
    return _impl.convt2x2_forward(_prep(x), _prep(w), _prep(bias), _num_threads)


def convt2x2_backward(x, w, dout):
    return _impl.convt2x2_backward(_prep(x), _prep(w), _prep(dout), _num_threads)


def maxpool2x2_forward(x):
    return _impl.maxpool2x2_forward(_prep(x), _num_threads)


def maxpool2x2_backward(idx, dout):
    return _impl.maxpool2x2_backward(_prep(idx), _prep(dout), _num_threads)
