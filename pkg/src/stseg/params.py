"""Named collections of model tensors, serialized as STTC checkpoints."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensorio
from .tensor import Tensor, get_default_dtype


class ParamStore:
    """Ordered name -> Tensor map.

    Trainable entries carry ``requires_grad``; buffers (running statistics)
    do not and are skipped by optimizers but serialized with everything else.
    Insertion order is the serialization order, so identical construction
    yields byte-identical checkpoints.
    """

    def __init__(self):
        self._items: dict[str, Tensor] = {}

    def add(self, name: str, data, trainable: bool = True, dtype=None) -> Tensor:
        if name in self._items:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = data if isinstance(data, Tensor) else Tensor(data, dtype=dtype)
        t.requires_grad = trainable
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._items.items())

    def trainable_items(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._items.items() if t.requires_grad]

    def zero_grads(self) -> None:
        for _, t in self.trainable_items():
            t.zero_grad()

    def n_parameters(self, trainable_only: bool = True) -> int:
        if trainable_only:
            return sum(t.size for _, t in self.trainable_items())
        return sum(t.size for t in self._items.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._items.items()}

    def save(self, path) -> None:
        tensorio.save_container(path, self.state_dict())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Copies values into existing entries; names must match exactly."""
        mine, theirs = set(self._items), set(state)
        if mine != theirs:
            missing = sorted(mine - theirs)
            extra = sorted(theirs - mine)
            raise ValueError(f"checkpoint mismatch: missing={missing} extra={extra}")
        for n, t in self._items.items():
            src = state[n]
            if tuple(src.shape) != t.shape:
                raise ValueError(f"shape mismatch for {n}: {src.shape} vs {t.shape}")
            t.data = np.ascontiguousarray(src, dtype=t.dtype)

    def load(self, path) -> None:
        self.load_state(tensorio.load_container(path))

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for n, t in self._items.items():
            out.add(n, t.data.astype(dtype), trainable=t.requires_grad, dtype=dtype)
        return out


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> np.ndarray:
    """Kaiming-normal draw: std = sqrt(2 / fan_in); suits ReLU stacks."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype or get_default_dtype())
