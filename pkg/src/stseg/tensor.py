"""Dense N-d tensors with reverse-mode automatic differentiation.

A dynamic tape: every differentiable op links its output tensor back to its
inputs together with a closure that maps the output gradient to input
gradients.  ``backward()`` on a scalar walks that graph once in reverse
topological order, accumulating gradients additively where a tensor feeds
several consumers, then frees the tape (double backward is unsupported).

Storage is float32 by default; ``set_default_dtype("f64")`` switches new
tensors to float64 for gradient verification, where finite differences need
the extra headroom.

There is deliberately no general matrix multiply: every dense transform in
the models is a convolution, so the op set stays minimal (elementwise
arithmetic, activations, log/clip, sum, and the layer ops in ``nn``).
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}

_default_dtype = np.float32


class NumericalError(RuntimeError):
    """Raised when a computation leaves the finite-value contract (NaN/Inf)."""


def set_default_dtype(name: str) -> None:
    global _default_dtype
    if name not in DTYPES:
        raise ValueError(f"unknown dtype {name!r}, expected one of {sorted(DTYPES)}")
    _default_dtype = DTYPES[name]


def get_default_dtype() -> np.dtype:
    return np.dtype(_default_dtype)


class Tensor:
    """N-d array plus optional gradient buffer and tape linkage.

    ``grad`` is ``None`` until backward reaches the tensor; ``None`` means a
    zero gradient.  Data is immutable by convention once the tensor has been
    consumed by an op; only ``grad`` accumulates afterwards.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = _default_dtype
        # order="C" rather than ascontiguousarray: 0-d shapes must survive
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._consumed = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"],
                 backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._consumed = False
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            # dead branch of the graph: keep the output but drop the tape
            out._parents = ()
            out._backward = None
        return out

    @staticmethod
    def zeros(shape, requires_grad: bool = False, dtype=None) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype or _default_dtype),
                      requires_grad=requires_grad, dtype=dtype)

    @staticmethod
    def ones(shape, requires_grad: bool = False, dtype=None) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype or _default_dtype),
                      requires_grad=requires_grad, dtype=dtype)

    # -- basic protocol --------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return (f"Tensor(shape={self.shape}, dtype={self.data.dtype}, "
                f"requires_grad={self.requires_grad})")

    # -- gradient plumbing ------------------------------------------------------

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match "
                             f"tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g if g.flags.owndata and g.flags.writeable else g.copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar through the recorded tape."""
        if self.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("graph already consumed: double backward is "
                               "unsupported")
        if self.requires_grad and self._backward is None and not self._parents:
            # leaf scalar: gradient of itself is one
            self.accumulate_grad(np.ones_like(self.data))
            return
        if self._backward is None:
            raise RuntimeError("backward on a tensor with no recorded graph "
                               "(already consumed, or grad not required)")
        self._consumed = True

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
                # free the tape and intermediate gradient buffers
                node._parents = ()
                node._backward = None
                node.grad = None

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tsum(self)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# -- broadcast rule ------------------------------------------------------------
#
# Binary ops accept equal shapes, a python scalar, a per-channel vector of
# shape [C] as the second operand against [..., C, H, W], or a batch-shared
# [C,H,W] second operand against [B,C,H,W].  Anything wider is a deliberate
# error: general broadcasting is out of contract.


def _reduce_to_channel(g: np.ndarray) -> np.ndarray:
    axes = tuple(i for i in range(g.ndim) if i != g.ndim - 3)
    return np.ascontiguousarray(g.sum(axis=axes))


def _reduce_to_leading(g: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(g.sum(axis=0))


def _binary_views(a: Tensor, b: Tensor):
    """Returns (b_view, reduce_fn_or_None) or raises on an unsupported pairing."""
    if a.shape == b.shape:
        return b.data, None
    if b.ndim == 1 and a.ndim >= 3 and a.shape[-3] == b.shape[0]:
        return b.data.reshape(b.shape[0], 1, 1), _reduce_to_channel
    if a.ndim == 4 and b.ndim == 3 and a.shape[1:] == b.shape:
        return b.data[None], _reduce_to_leading
    raise ValueError(f"shape mismatch: {a.shape} vs {b.shape} "
                     "(equal shapes, a per-channel [C], or a batch-shared "
                     "[C,H,W] second operand)")


def _scalar_op(a: Tensor, s: float, fn, dfn) -> Tensor:
    data = fn(a.data, a.dtype.type(s))

    def bwd(g):
        a.accumulate_grad(dfn(g, a.dtype.type(s)))

    return Tensor._from_op(data, (a,), bwd)


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return _scalar_op(a, float(b), lambda x, s: x + s, lambda g, s: g.copy())
    bv, reduce_fn = _binary_views(a, b)
    data = a.data + bv

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.copy())
        if b.requires_grad:
            b.accumulate_grad(reduce_fn(g) if reduce_fn else g.copy())

    return Tensor._from_op(data, (a, b), bwd)


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return _scalar_op(a, float(b), lambda x, s: x - s, lambda g, s: g.copy())
    bv, reduce_fn = _binary_views(a, b)
    data = a.data - bv

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.copy())
        if b.requires_grad:
            b.accumulate_grad(-(reduce_fn(g) if reduce_fn else g))

    return Tensor._from_op(data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    """Hadamard product; backward distributes the other operand."""
    if isinstance(b, (int, float)):
        return _scalar_op(a, float(b), lambda x, s: x * s, lambda g, s: g * s)
    bv, reduce_fn = _binary_views(a, b)
    data = a.data * bv

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * bv)
        if b.requires_grad:
            gb = g * a.data
            b.accumulate_grad(reduce_fn(gb) if reduce_fn else gb)

    return Tensor._from_op(data, (a, b), bwd)


def sigmoid(x: Tensor) -> Tensor:
    # exp(-|x|) never overflows; the two branches share it
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bwd(g):
        x.accumulate_grad(g * (out * (1.0 - out)))

    return Tensor._from_op(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bwd(g):
        x.accumulate_grad(g * (1.0 - out * out))

    return Tensor._from_op(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        # subgradient 0 at the kink
        x.accumulate_grad(g * (x.data > 0))

    return Tensor._from_op(out, (x,), bwd)


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def bwd(g):
        x.accumulate_grad(g / x.data)

    return Tensor._from_op(out, (x,), bwd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)

    def bwd(g):
        x.accumulate_grad(g * ((x.data >= lo) & (x.data <= hi)))

    return Tensor._from_op(out, (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    out = np.array(x.data.sum(dtype=x.dtype), dtype=x.dtype)

    def bwd(g):
        x.accumulate_grad(np.full_like(x.data, g))

    return Tensor._from_op(out, (x,), bwd)


def check_finite(x: Tensor, what: str = "tensor") -> Tensor:
    """Finite-value guard; NaN/Inf anywhere is an error state, not a value."""
    if not np.isfinite(x.data).all():
        raise NumericalError(f"non-finite values in {what}")
    return x
