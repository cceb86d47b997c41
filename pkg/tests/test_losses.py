import numpy as np
import pytest

import oracles
from stseg import losses
from stseg.tensor import Tensor

EPS = 1e-7


def random_pmap(rng, shape):
    """Valid probability map: channel 0 free in (0,1), channel 1 complements."""
    b, c, h, w = shape
    p0 = rng.uniform(0.02, 0.98, size=(b, h, w))
    return np.stack([p0, 1.0 - p0], axis=1)


def random_onehot(rng, b, h, w):
    return losses.mask_to_onehot(rng.integers(0, 2, size=(b, h, w)),
                                 dtype=np.float64)


class TestCrossEntropy:
    def test_perfect_prediction_is_tiny(self, f64, rng):
        target = random_onehot(rng, 1, 4, 4)
        h = losses.cross_entropy(Tensor(target), target, EPS)
        assert 0 <= h.item() <= -np.log(1 - EPS) + 1e-12

    def test_uniform_prediction_is_log2(self, f64):
        pred = Tensor(np.full((1, 2, 4, 4), 0.5))
        target = losses.mask_to_onehot(np.zeros((1, 4, 4)), dtype=np.float64)
        assert abs(losses.cross_entropy(pred, target, EPS).item()
                   - np.log(2.0)) < 1e-12

    def test_matches_summation_oracle(self, f64, rng):
        for _ in range(5):
            pred = random_pmap(rng, (1, 2, 2, 2))
            target = random_onehot(rng, 1, 2, 2)
            got = losses.cross_entropy(Tensor(pred), target, EPS).item()
            want = oracles.cross_entropy_oracle(pred, target, EPS)
            assert abs(got - want) < 1e-10

    def test_non_one_hot_rejected(self, f64, rng):
        pred = Tensor(random_pmap(rng, (1, 2, 3, 3)))
        bad = np.full((1, 2, 3, 3), 0.5)
        with pytest.raises(ValueError):
            losses.cross_entropy(pred, bad, EPS)


class TestSoftIou:
    def test_identity(self, f64, rng):
        target = random_onehot(rng, 1, 6, 6)
        j = losses.soft_iou(Tensor(target), target, EPS).item()
        assert abs(j - 1.0) < 1e-6

    def test_disjoint_masks_near_zero(self, f64):
        mask = np.zeros((1, 8, 8))
        mask[:, :4] = 1  # half-roads image
        target = losses.mask_to_onehot(mask, dtype=np.float64)
        pred = Tensor(1.0 - target)
        assert losses.soft_iou(pred, target, EPS).item() < 1e-6

    def test_matches_summation_oracle(self, f64, rng):
        for _ in range(5):
            pred = random_pmap(rng, (1, 2, 3, 3))
            target = random_onehot(rng, 1, 3, 3)
            got = losses.soft_iou(Tensor(pred), target, EPS).item()
            want = oracles.soft_iou_oracle(pred, target, EPS)
            assert abs(got - want) < 1e-10

    def test_range(self, f64, rng):
        for _ in range(10):
            pred = random_pmap(rng, (2, 2, 4, 4))
            target = random_onehot(rng, 2, 4, 4)
            j = losses.soft_iou(Tensor(pred), target, EPS).item()
            assert 0.0 < j <= 1.0


class TestJointLoss:
    def test_alpha_one_is_cross_entropy_exactly(self, f64, rng):
        pred = Tensor(random_pmap(rng, (1, 2, 4, 4)))
        target = random_onehot(rng, 1, 4, 4)
        h = losses.cross_entropy(pred, target, EPS)
        j = losses.soft_iou(pred, target, EPS)
        loss = losses.combine_joint(h, j, alpha=1.0)
        assert loss.item() == h.item()

    def test_perfect_prediction_near_zero(self, f64, rng):
        target = random_onehot(rng, 1, 5, 5)
        loss = losses.joint_loss(Tensor(target), target,
                                 losses.LossConfig(alpha=0.5))
        assert abs(loss.item()) < 1e-5

    def test_composition_of_oracles(self, f64, rng):
        alpha = 0.5
        pred = random_pmap(rng, (1, 2, 3, 3))
        target = random_onehot(rng, 1, 3, 3)
        got = losses.joint_loss(Tensor(pred), target,
                                losses.LossConfig(alpha=alpha)).item()
        want = (alpha * oracles.cross_entropy_oracle(pred, target, EPS)
                - (1 - alpha) * np.log(oracles.soft_iou_oracle(pred, target, EPS)))
        assert abs(got - want) < 1e-10

    def test_monotone_decreasing_in_iou(self, f64):
        h = Tensor(np.array(0.3))
        for alpha in (0.0, 0.3, 0.7, 0.99):
            values = [losses.combine_joint(h, Tensor(np.array(j)), alpha).item()
                      for j in (0.2, 0.4, 0.6, 0.8, 0.999)]
            assert all(a > b for a, b in zip(values, values[1:]))

    def test_finite_everywhere(self, f64, rng):
        # all-zero and all-one predictions hit the clamps, not infinities
        target = random_onehot(rng, 1, 4, 4)
        for fill in (0.0, 1.0):
            pred = Tensor(np.full((1, 2, 4, 4), fill))
            loss = losses.joint_loss(pred, target, losses.LossConfig(alpha=0.7))
            assert np.isfinite(loss.item())

    def test_gradient_matches_finite_differences(self, f64, rng):
        pred_arr = random_pmap(rng, (1, 2, 3, 3))
        target = random_onehot(rng, 1, 3, 3)
        cfg = losses.LossConfig(alpha=0.6)
        pred = Tensor(pred_arr.copy(), requires_grad=True)
        losses.joint_loss(pred, target, cfg).backward()
        flat = pred.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + 1e-6
            up = losses.joint_loss(Tensor(pred.data), target, cfg).item()
            flat[i] = orig - 1e-6
            down = losses.joint_loss(Tensor(pred.data), target, cfg).item()
            flat[i] = orig
            num[i] = (up - down) / 2e-6
        rel = np.abs(pred.grad.reshape(-1) - num).max() / np.abs(num).max()
        assert rel < 1e-4

    def test_alpha_bounds_validated(self):
        with pytest.raises(ValueError):
            losses.LossConfig(alpha=1.5)


class TestPixelAccuracy:
    def test_all_correct(self, rng):
        ids = rng.integers(0, 2, size=(2, 8, 8))
        assert losses.pixel_accuracy(ids, ids) == 100.0

    def test_half_flipped(self):
        a = np.zeros((4, 4), dtype=np.int64)
        b = a.copy()
        b[:2] = 1  # exactly half the pixels differ
        assert losses.pixel_accuracy(b, a) == 50.0

    def test_matches_counting_oracle(self, rng):
        a = rng.integers(0, 2, size=(16, 16))
        b = rng.integers(0, 2, size=(16, 16))
        assert losses.pixel_accuracy(a, b) == oracles.accuracy_counting_oracle(a, b)

    def test_permutation_invariance(self, rng):
        a = rng.integers(0, 2, size=64)
        b = rng.integers(0, 2, size=64)
        perm = rng.permutation(64)
        assert losses.pixel_accuracy(a, b) == losses.pixel_accuracy(a[perm], b[perm])

    def test_bounds_and_shape_checks(self, rng):
        a = rng.integers(0, 2, size=(4, 4))
        assert 0.0 <= losses.pixel_accuracy(a, 1 - a) <= 100.0
        with pytest.raises(ValueError):
            losses.pixel_accuracy(a, a[:2])
        with pytest.raises(ValueError):
            losses.pixel_accuracy(a + 5, a)


class TestMaskHelpers:
    def test_onehot_round_trip(self, rng):
        mask = rng.integers(0, 2, size=(8, 8))
        onehot = losses.mask_to_onehot(mask)
        assert np.array_equal(onehot[losses.ROAD_CHANNEL], mask)
        assert np.array_equal(onehot.sum(axis=0), np.ones((8, 8), np.float32))

    def test_probs_to_mask_threshold(self):
        probs = np.zeros((2, 2, 2))
        probs[0] = [[0.4, 0.5], [0.51, 1.0]]
        assert np.array_equal(losses.probs_to_mask(probs),
                              [[0, 1], [1, 1]])

    def test_hard_iou(self):
        a = np.array([[1, 1], [0, 0]])
        b = np.array([[1, 0], [0, 0]])
        assert losses.hard_iou(a, b) == 0.5
        assert losses.hard_iou(a, a) == 1.0
        assert losses.hard_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
