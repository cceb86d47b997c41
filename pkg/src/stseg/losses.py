"""Joint segmentation loss (cross entropy blended with a differentiable IoU)
and evaluation metrics.

Channel 0 of every probability map is the "roads" class; channel 1 is the
background.  The soft IoU is computed on the roads channel only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, clip, log, mul, tsum

ROAD_CHANNEL = 0


@dataclass
class LossConfig:
    alpha: float = 0.7      # weight of the cross-entropy term
    epsilon: float = 1e-7   # log/ratio clamp

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def _target_array(target) -> np.ndarray:
    return target.data if isinstance(target, Tensor) else np.asarray(target)


def _check_one_hot(t: np.ndarray) -> None:
    if not (((t == 0) | (t == 1)).all() and np.all(t.sum(axis=-3) == 1)):
        raise ValueError("target must be one-hot across the class channel")


def cross_entropy(pred: Tensor, target, epsilon: float = 1e-7) -> Tensor:
    """Mean negative log-probability of the true class per pixel.

    Normalized by pixel count (batch * height * width); probabilities are
    clamped to [eps, 1-eps] so the loss stays finite.
    """
    t = _target_array(target)
    if t.shape != pred.shape:
        raise ValueError(f"target shape {t.shape} != pred shape {pred.shape}")
    _check_one_hot(t)
    b, _, h, w = pred.shape
    picked = mul(log(clip(pred, epsilon, 1.0 - epsilon)),
                 Tensor(t, dtype=pred.dtype))
    return mul(tsum(picked), -1.0 / (b * h * w))


def soft_iou(pred: Tensor, target, epsilon: float = 1e-7,
             channel: int = ROAD_CHANNEL) -> Tensor:
    """Differentiable intersection-over-union on the roads channel.

    J = (sum(p*y) + eps) / (sum(p + y - p*y) + eps), in (0, 1]; eps keeps
    empty masks well-defined.
    """
    t = _target_array(target)
    if t.shape != pred.shape:
        raise ValueError(f"target shape {t.shape} != pred shape {pred.shape}")
    p = pred.data[:, channel]
    y = t[:, channel].astype(pred.dtype)
    inter = float((p * y).sum())
    union = float((p + y - p * y).sum())
    j = (inter + epsilon) / (union + epsilon)
    out = np.array(j, dtype=pred.dtype)

    def bwd(g):
        dj_dp = (y * (union + epsilon) - (inter + epsilon) * (1.0 - y))
        dj_dp /= (union + epsilon) ** 2
        dpred = np.zeros_like(pred.data)
        dpred[:, channel] = g * dj_dp
        pred.accumulate_grad(dpred)

    return Tensor._from_op(out, (pred,), bwd)


def combine_joint(h: Tensor, j: Tensor, alpha: float) -> Tensor:
    """L = alpha * H - (1 - alpha) * log(J); exact identity L == H at alpha 1."""
    return add(mul(h, alpha), mul(log(j), alpha - 1.0))


def joint_loss(pred: Tensor, target, cfg: LossConfig = LossConfig()) -> Tensor:
    h = cross_entropy(pred, target, cfg.epsilon)
    j = soft_iou(pred, target, cfg.epsilon)
    return combine_joint(h, j, cfg.alpha)


def pixel_accuracy(pred_classes: np.ndarray, target_classes: np.ndarray,
                   num_classes: int = 2) -> float:
    """Percentage of pixels whose class id matches."""
    pred_classes = np.asarray(pred_classes)
    target_classes = np.asarray(target_classes)
    if pred_classes.shape != target_classes.shape:
        raise ValueError(f"shape mismatch: {pred_classes.shape} vs {target_classes.shape}")
    if pred_classes.max(initial=0) >= num_classes or target_classes.max(initial=0) >= num_classes:
        raise ValueError("class id out of range")
    return 100.0 * float((pred_classes == target_classes).mean())


# -- mask / probability conversions --------------------------------------------


def mask_to_onehot(mask: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Binary road mask [..., H, W] -> one-hot [..., 2, H, W] (roads first)."""
    m = (np.asarray(mask) > 0).astype(dtype)
    return np.stack([m, 1.0 - m], axis=-3)


def mask_to_classes(mask: np.ndarray) -> np.ndarray:
    """Road pixels are class 0, background class 1."""
    return np.where(np.asarray(mask) > 0, 0, 1).astype(np.int64)


def probs_to_classes(probs: np.ndarray) -> np.ndarray:
    """Argmax class ids from [..., C, H, W] probabilities."""
    return np.argmax(probs, axis=-3).astype(np.int64)


def probs_to_mask(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Thresholds the roads channel; returns a binary [..., H, W] mask."""
    return (np.asarray(probs)[..., ROAD_CHANNEL, :, :] >= threshold).astype(np.uint8)


def hard_iou(pred_mask: np.ndarray, true_mask: np.ndarray) -> float:
    p = np.asarray(pred_mask) > 0
    t = np.asarray(true_mask) > 0
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)
