"""Finite-difference verification of every differentiable operation.

Each check scalarizes an op's output against a fixed random projection,
computes analytic gradients through the tape, and compares them with central
differences (step 1e-5) in 64-bit.  The reported error is
max|analytic - numeric| / max(inf-norms, 1e-6) per input tensor, worst case
over inputs.  Probes for relu and max pooling are nudged away from their
kinks, where one-sided derivatives make the comparison meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import convlstm as cl
from . import losses
from . import nn
from . import tensor as T
from . import unet as un

STEP = 1e-5
DEFAULT_TOL = 1e-4
NETWORK_TOL = 1e-3  # full-network composites accumulate more roundoff


@dataclass
class CheckResult:
    module: str
    name: str
    err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.err < self.tol


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0), 1e-6)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def _coords(rng: np.random.Generator, size: int, cap: int = 512) -> np.ndarray:
    if size <= cap:
        return np.arange(size)
    return rng.choice(size, size=8, replace=False)


def check_op(forward: Callable[[], T.Tensor], wiggle: Iterable[T.Tensor],
             rng: np.random.Generator, step: float = STEP) -> float:
    """Worst relative error of d(loss)/d(input) over the wiggled tensors,
    where loss = sum(forward() * R) for a fixed random projection R."""
    wiggle = list(wiggle)
    probe = forward()
    r = rng.standard_normal(probe.shape)

    def loss_value() -> float:
        return float((forward().data * r).sum())

    loss = T.tsum(T.mul(forward(), T.Tensor(r, dtype=np.float64)))
    for w in wiggle:
        w.grad = None
    loss.backward()
    worst = 0.0
    for w in wiggle:
        analytic = w.grad if w.grad is not None else np.zeros_like(w.data)
        flat = w.data.reshape(-1)
        cs = _coords(rng, flat.size)
        numeric = np.empty(len(cs))
        for n, c in enumerate(cs):
            orig = flat[c]
            flat[c] = orig + step
            up = loss_value()
            flat[c] = orig - step
            down = loss_value()
            flat[c] = orig
            numeric[n] = (up - down) / (2 * step)
        worst = max(worst, _rel_err(analytic.reshape(-1)[cs], numeric))
    return worst


def _t(rng, shape, lo=-1.0, hi=1.0) -> T.Tensor:
    return T.Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True,
                    dtype=np.float64)


def _away_from_zero(t: T.Tensor, margin: float = 1e-2) -> T.Tensor:
    t.data = t.data + np.where(t.data >= 0, margin, -margin)
    return t


def _distinct_windows(t: T.Tensor) -> T.Tensor:
    # spread window entries so the argmax never sits near a tie
    b, c, h, w = t.shape
    ramp = np.arange(h * w, dtype=np.float64).reshape(h, w) * 1e-3
    t.data = t.data + ramp
    return t


# -- suites ---------------------------------------------------------------------


def _tensor_checks(rng) -> list[tuple[str, float, float]]:
    out = []
    a, b = _t(rng, (2, 3, 4)), _t(rng, (2, 3, 4))
    out.append(("add", check_op(lambda: T.add(a, b), [a, b], rng), DEFAULT_TOL))
    out.append(("sub", check_op(lambda: T.sub(a, b), [a, b], rng), DEFAULT_TOL))
    out.append(("mul", check_op(lambda: T.mul(a, b), [a, b], rng), DEFAULT_TOL))
    x4, bias = _t(rng, (2, 3, 4, 4)), _t(rng, (3,))
    out.append(("add_channel_bias", check_op(lambda: T.add(x4, bias), [x4, bias], rng),
                DEFAULT_TOL))
    out.append(("mul_channel", check_op(lambda: T.mul(x4, bias), [x4, bias], rng),
                DEFAULT_TOL))
    x = _t(rng, (3, 5, 5), lo=-3, hi=3)
    out.append(("sigmoid", check_op(lambda: T.sigmoid(x), [x], rng), DEFAULT_TOL))
    out.append(("tanh", check_op(lambda: T.tanh(x), [x], rng), DEFAULT_TOL))
    xr = _away_from_zero(_t(rng, (3, 5, 5), lo=-2, hi=2))
    out.append(("relu", check_op(lambda: T.relu(xr), [xr], rng), DEFAULT_TOL))
    xp = _t(rng, (4, 4), lo=0.1, hi=2.0)
    out.append(("log", check_op(lambda: T.log(xp), [xp], rng), DEFAULT_TOL))
    xc = _t(rng, (4, 4), lo=-1, hi=1)
    out.append(("clip", check_op(lambda: T.clip(xc, -0.5, 0.5), [xc], rng),
                DEFAULT_TOL))
    xs = _t(rng, (2, 7))
    out.append(("sum", check_op(lambda: T.tsum(xs), [xs], rng), DEFAULT_TOL))
    return out


def _nn_checks(rng) -> list[tuple[str, float, float]]:
    out = []
    for tag, (shape, cout, k, s, p) in {
        "conv2d_3x3_same": ((1, 2, 6, 6), 3, 3, 1, 1),
        "conv2d_3x3_s2": ((2, 2, 7, 7), 2, 3, 2, 0),
        "conv2d_1x1": ((1, 3, 5, 5), 2, 1, 1, 0),
    }.items():
        x, w, b = _t(rng, shape), _t(rng, (cout, shape[1], k, k)), _t(rng, (cout,))
        out.append((tag, check_op(
            lambda x=x, w=w, b=b, s=s, p=p: nn.conv2d(x, w, b, stride=s, padding=p),
            [x, w, b], rng), DEFAULT_TOL))
    x, w, b = _t(rng, (1, 4, 3, 3)), _t(rng, (2, 4, 2, 2)), _t(rng, (2,))
    out.append(("conv_transpose2d", check_op(
        lambda: nn.conv_transpose2d(x, w, b), [x, w, b], rng), DEFAULT_TOL))
    xm = _distinct_windows(_t(rng, (1, 2, 6, 6)))
    out.append(("maxpool2x2", check_op(lambda: nn.maxpool2x2(xm), [xm], rng),
                DEFAULT_TOL))

    xb = _t(rng, (2, 2, 3, 3))
    gamma, beta = _t(rng, (2,), lo=0.5, hi=1.5), _t(rng, (2,))

    def bn(training: bool) -> T.Tensor:
        p = nn.BatchNormParams(
            gamma=gamma, beta=beta,
            running_mean=T.Tensor(np.zeros(2), dtype=np.float64),
            running_var=T.Tensor(np.ones(2), dtype=np.float64))
        return nn.batchnorm2d(xb, p, training=training)

    out.append(("batchnorm2d_train", check_op(lambda: bn(True), [xb, gamma, beta],
                                              rng), DEFAULT_TOL))
    out.append(("batchnorm2d_eval", check_op(lambda: bn(False), [xb, gamma, beta],
                                             rng), DEFAULT_TOL))
    ca, cb = _t(rng, (1, 2, 4, 4)), _t(rng, (1, 3, 4, 4))
    out.append(("concat_channels", check_op(lambda: nn.concat_channels(ca, cb),
                                            [ca, cb], rng), DEFAULT_TOL))
    xs = _t(rng, (1, 3, 4, 4), lo=-2, hi=2)
    out.append(("softmax_channels", check_op(lambda: nn.softmax_channels(xs), [xs],
                                             rng), DEFAULT_TOL))

    # composite chain on a 1x2x6x6 input
    xch = _t(rng, (1, 2, 6, 6))
    wch, bch = _t(rng, (3, 2, 3, 3)), _t(rng, (3,))
    gch, betch = _t(rng, (3,), lo=0.5, hi=1.5), _t(rng, (3,))

    def chain() -> T.Tensor:
        h = nn.conv2d(xch, wch, bch, stride=1, padding=1)
        p = nn.BatchNormParams(
            gamma=gch, beta=betch,
            running_mean=T.Tensor(np.zeros(3), dtype=np.float64),
            running_var=T.Tensor(np.ones(3), dtype=np.float64))
        return T.relu(nn.batchnorm2d(h, p, training=True))

    out.append(("conv_bn_relu_chain", check_op(chain, [xch, wch, bch, gch, betch],
                                               rng), DEFAULT_TOL))
    return out


def _unet_checks(rng) -> list[tuple[str, float, float]]:
    cfg = un.UNetConfig(in_channels=3, base_filters=4, depth=2, num_classes=2)
    store = un.unet_init(cfg, seed=7).astype(np.float64)
    x = T.Tensor(rng.uniform(-1, 1, size=(1, 3, 16, 16)), dtype=np.float64)
    params = [t for _, t in store.trainable_items()]
    err = check_op(lambda: un.unet_forward(x, store, cfg, mode="train"),
                   params, rng)
    return [("unet_full_network", err, NETWORK_TOL)]


def _rnn_checks(rng) -> list[tuple[str, float, float]]:
    out = []
    cfg = cl.ConvLstmConfig(input_channels=2, hidden_filters=3, kernel=3, layers=1)
    store = cl.convlstm_init(cfg, seed=3).astype(np.float64)
    for name, t in store.items():  # exercise nonzero peepholes and biases
        t.data = t.data + rng.uniform(-0.5, 0.5, size=t.shape)
    x = T.Tensor(rng.uniform(-1, 1, size=(1, 2, 5, 5)), dtype=np.float64)
    state = cl.ConvLstmState(
        h=T.Tensor(rng.uniform(-0.5, 0.5, size=(1, 3, 5, 5)), dtype=np.float64),
        c=T.Tensor(rng.uniform(-0.5, 0.5, size=(1, 3, 5, 5)), dtype=np.float64))
    params = [t for _, t in store.trainable_items()]

    def cell_h() -> T.Tensor:
        return cl.convlstm_cell(x, state, store, cfg).h

    out.append(("convlstm_cell", check_op(cell_h, params, rng), NETWORK_TOL))

    cfg2 = cl.ConvLstmConfig(input_channels=2, hidden_filters=4, kernel=3, layers=2)
    store2 = cl.convlstm_init(cfg2, seed=5).astype(np.float64)
    for name, t in store2.items():
        t.data = t.data + rng.uniform(-0.3, 0.3, size=t.shape)
    seq = [T.Tensor(rng.uniform(0, 1, size=(1, 2, 8, 8)), dtype=np.float64)
           for _ in range(3)]
    params2 = [t for _, t in store2.trainable_items()]
    out.append(("convlstm_bptt_t3", check_op(
        lambda: cl.temporal_forward(seq, store2, cfg2), params2, rng), NETWORK_TOL))
    return out


def _loss_checks(rng) -> list[tuple[str, float, float]]:
    out = []
    b, c, h, w = 1, 2, 4, 4
    mask = rng.integers(0, 2, size=(b, h, w))
    target = losses.mask_to_onehot(mask, dtype=np.float64)

    def pred() -> T.Tensor:
        raw = rng.uniform(0.05, 0.95, size=(b, c, h, w))
        raw[:, 1] = 1.0 - raw[:, 0]
        return T.Tensor(raw, requires_grad=True, dtype=np.float64)

    p1 = pred()
    out.append(("cross_entropy", check_op(
        lambda: losses.cross_entropy(p1, target), [p1], rng), DEFAULT_TOL))
    p2 = pred()
    out.append(("soft_iou", check_op(
        lambda: losses.soft_iou(p2, target), [p2], rng), DEFAULT_TOL))
    p3 = pred()
    cfg = losses.LossConfig(alpha=0.6)
    out.append(("joint_loss", check_op(
        lambda: losses.joint_loss(p3, target, cfg), [p3], rng), DEFAULT_TOL))
    return out


SUITES = {
    "tensor": _tensor_checks,
    "nn": _nn_checks,
    "unet": _unet_checks,
    "rnn": _rnn_checks,
    "loss": _loss_checks,
}

_MODULE_IDS = {name: i for i, name in enumerate(SUITES)}


def run_gradchecks(modules: Iterable[str] = ("tensor", "nn", "unet", "rnn", "loss"),
                   dtype: str = "f64", seed: int = 20240, verbose: bool = True
                   ) -> list[CheckResult]:
    if dtype != "f64":
        raise ValueError("gradient checks require the 64-bit verification mode")
    previous = T.get_default_dtype()
    T.set_default_dtype("f64")
    results: list[CheckResult] = []
    try:
        for module in modules:
            if module not in SUITES:
                raise ValueError(f"unknown gradcheck module {module!r}; "
                                 f"choose from {sorted(SUITES)} or 'all'")
            rng = np.random.default_rng([seed, _MODULE_IDS[module]])
            for name, err, tol in SUITES[module](rng):
                res = CheckResult(module=module, name=name, err=err, tol=tol)
                results.append(res)
                if verbose:
                    status = "ok" if res.passed else "FAIL"
                    print(f"[{status}] {module}.{name}: "
                          f"max rel err {err:.3e} (tol {tol:.1e})")
    finally:
        T.set_default_dtype("f32" if previous == np.float32 else "f64")
    return results
