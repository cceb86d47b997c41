"""Dihedral-group data augmentation: the 8 symmetries of a square applied
jointly to every image of a sequence and to its label."""

from __future__ import annotations

import numpy as np

from .dataset import SequenceSample

N_OPS = 8


def dihedral_apply(arr: np.ndarray, op_id: int) -> np.ndarray:
    """op_id = k + 4*e: optional horizontal flip (e) then k*90 degrees CCW."""
    if not 0 <= op_id < N_OPS:
        raise ValueError(f"op_id must be in 0..7, got {op_id}")
    a = np.asarray(arr)
    k, flip = op_id % 4, op_id // 4
    if k % 2 and a.shape[-2] != a.shape[-1]:
        raise ValueError("90/270 degree rotations need square patches")
    if flip:
        a = np.flip(a, axis=-1)
    if k:
        a = np.rot90(a, k, axes=(-2, -1))
    return np.ascontiguousarray(a)


def dihedral_compose(outer: int, inner: int) -> int:
    """op_id of applying ``inner`` first, then ``outer``."""
    ko, eo = outer % 4, outer // 4
    ki, ei = inner % 4, inner // 4
    # a flip conjugates rotations: f r^k = r^{-k} f
    k = (ko + (ki if eo == 0 else -ki)) % 4
    return k + 4 * (eo ^ ei)


def dihedral_inverse(op_id: int) -> int:
    k, e = op_id % 4, op_id // 4
    return ((-k) % 4) + 4 * e if e == 0 else op_id


def augment(sample: SequenceSample, op_id: int) -> SequenceSample:
    """Same group element on all dates and the label, preserving alignment."""
    return SequenceSample(
        images=[dihedral_apply(img, op_id) for img in sample.images],
        label=dihedral_apply(sample.label, op_id),
        dates=list(sample.dates),
        meta=dict(sample.meta))
