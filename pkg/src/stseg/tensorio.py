"""Bit-exact binary formats for tensors and named tensor collections.

Tensor file ("STT1"): magic bytes, little-endian u32 ndim, ndim little-endian
u32 extents, u8 dtype code (0 = float32, 1 = float64), row-major little-endian
payload, no padding.

Container file ("STTC"): magic bytes, little-endian u32 entry count, then per
entry a little-endian u32 name length, the UTF-8 name, and an STT1 blob.
Containers hold checkpoints and probability-map caches.
"""

from __future__ import annotations

import os
import struct
from typing import BinaryIO, Mapping

import numpy as np

TENSOR_MAGIC = b"STT1"
CONTAINER_MAGIC = b"STTC"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def dumps_tensor(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(arr)
    if a.dtype not in _CODE_FOR_KIND:
        a = a.astype(np.float32)
    code = _CODE_FOR_KIND[a.dtype]
    head = TENSOR_MAGIC + struct.pack("<I", a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b""
    head += struct.pack("<B", code)
    return head + a.astype(_DTYPE_CODES[code], copy=False).tobytes()


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError("truncated tensor stream")
    return buf


def read_tensor_stream(f: BinaryIO) -> np.ndarray:
    magic = _read_exact(f, 4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    (ndim,) = struct.unpack("<I", _read_exact(f, 4))
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim)) if ndim else ()
    (code,) = struct.unpack("<B", _read_exact(f, 1))
    if code not in _DTYPE_CODES:
        raise ValueError(f"unknown dtype code {code}")
    dt = _DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    data = np.frombuffer(_read_exact(f, count * dt.itemsize), dtype=dt)
    return data.reshape(shape).copy()


def save_tensor(path, arr: np.ndarray) -> None:
    _atomic_write(path, dumps_tensor(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        arr = read_tensor_stream(f)
        if f.read(1):
            raise ValueError(f"trailing bytes after tensor payload in {path}")
    return arr


def save_container(path, entries: Mapping[str, np.ndarray]) -> None:
    chunks = [CONTAINER_MAGIC, struct.pack("<I", len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(dumps_tensor(arr))
    _atomic_write(path, b"".join(chunks))


def load_container(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != CONTAINER_MAGIC:
            raise ValueError(f"bad container magic {magic!r}")
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, nlen).decode("utf-8")
            out[name] = read_tensor_stream(f)
        if f.read(1):
            raise ValueError(f"trailing bytes after container payload in {path}")
    return out


def _atomic_write(path, payload: bytes) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)
