import numpy as np
import pytest

from stseg import dataset as ds
from stseg import tensorio
from stseg.predict import (composite_rgb, fcn_tiled, pad_to_multiple,
                           run_prediction, tiled_apply)
from stseg.synth import JITTER_PRESETS, synth_scene
from stseg.train import TrainConfig, train_fcn
from stseg.unet import UNetConfig


class TestPadding:
    def test_no_pad_when_divisible(self, rng):
        img = rng.random((3, 32, 32))
        padded, (h, w) = pad_to_multiple(img, 8)
        assert padded.shape == (3, 32, 32) and (h, w) == (32, 32)

    def test_pads_up_and_records_original(self, rng):
        img = rng.random((3, 30, 33))
        padded, (h, w) = pad_to_multiple(img, 8)
        assert padded.shape == (3, 32, 40) and (h, w) == (30, 33)
        assert np.array_equal(padded[:, :30, :33], img)


class TestTiledApply:
    def test_identity_network_round_trip(self, rng):
        """Tiled application of an identity map equals the untiled raster."""
        img = rng.random((2, 320, 320)).astype(np.float32)

        def identity(crops):
            return crops[0]

        out = tiled_apply(identity, [img], tile=128, overlap=32)
        assert np.array_equal(out, img)

    def test_identity_with_padding_multiple(self, rng):
        img = rng.random((2, 300, 190)).astype(np.float32)

        def identity(crops):
            return crops[0]

        out = tiled_apply(identity, [img], tile=128, overlap=32, multiple=16)
        assert np.array_equal(out, img)

    def test_degenerate_single_tile(self, rng):
        img = rng.random((1, 100, 90)).astype(np.float32)
        out = tiled_apply(lambda crops: crops[0], [img], tile=2048, overlap=512)
        assert np.array_equal(out, img)


class TestComposite:
    def test_rgb_channel_assignment(self):
        masks = [np.array([[1, 0]]), np.array([[1, 0]]), np.array([[1, 1]])]
        comp = composite_rgb(masks)
        assert comp.shape == (1, 2, 3)
        assert tuple(comp[0, 0]) == (255, 255, 255)  # all dates agree: white
        assert tuple(comp[0, 1]) == (0, 0, 255)      # only date 2: blue

    def test_needs_three_dates(self):
        with pytest.raises(ValueError):
            composite_rgb([np.zeros((2, 2))] * 2)


@pytest.fixture(scope="module")
def trained_fcn(tmp_path_factory):
    root = tmp_path_factory.mktemp("predset")
    idx = 0
    for split, count in (("train", 3), ("val", 1)):
        for _ in range(count):
            sample = synth_scene(idx, 32, 32, 3, JITTER_PRESETS["default"])
            ds.save_scene(root / split / f"scene_{idx:03d}", sample)
            idx += 1
    cfg = UNetConfig(in_channels=3, base_filters=4, depth=2)
    tcfg = TrainConfig(stage="fcn", lr_schedule=((2, 1e-3),),
                       batches_per_epoch=2, batch_size=2, seed=0, crop=16)
    res = train_fcn(root, cfg, tcfg, tmp_path_factory.mktemp("predrun"))
    return root, res["best"]


class TestRunPrediction:
    def test_single_image_outputs(self, trained_fcn, tmp_path):
        root, ckpt = trained_fcn
        img_path = root / "val" / "scene_003" / "img_t0.png"
        outputs = run_prediction(ckpt, [img_path], tmp_path / "out",
                                 tile=2048, overlap=512)
        pmap = tensorio.load_tensor(outputs["pmap"])
        assert pmap.shape == (2, 32, 32)
        assert np.abs(pmap.sum(axis=0) - 1.0).max() < 1e-5
        mask = ds.load_mask(outputs["mask"])
        assert mask.shape == (32, 32)
        assert "composite" not in outputs

    def test_three_date_composite_written(self, trained_fcn, tmp_path):
        root, ckpt = trained_fcn
        scene = root / "val" / "scene_003"
        paths = [scene / f"img_t{t}.png" for t in range(3)]
        # no rnn checkpoint: single-image contract forbids 3 images
        with pytest.raises(ValueError):
            run_prediction(ckpt, paths, tmp_path / "o1")

    def test_tiled_equals_untiled(self, trained_fcn, tmp_path, rng):
        root, ckpt = trained_fcn
        from stseg.train import load_fcn_checkpoint
        store, cfg, mean, std = load_fcn_checkpoint(ckpt)
        img = synth_scene(77, 64, 64, 1, JITTER_PRESETS["default"]).images[0]
        whole = fcn_tiled(img, store, cfg, mean, std, tile=2048, overlap=512)
        tiled = fcn_tiled(img, store, cfg, mean, std, tile=32, overlap=16)
        # seams only at tile borders where batchnorm context changes; the
        # probability field must still agree tightly
        assert whole.shape == tiled.shape == (2, 64, 64)
        assert np.abs(whole - tiled).max() < 0.2
        assert np.abs(whole - tiled).mean() < 0.02

    def test_extent_mismatch_rejected(self, trained_fcn, tmp_path):
        root, ckpt = trained_fcn
        a = root / "val" / "scene_003" / "img_t0.png"
        other = synth_scene(5, 64, 64, 1, JITTER_PRESETS["default"])
        ds.save_scene(tmp_path / "other", other)
        with pytest.raises(ValueError):
            run_prediction(ckpt, [a, tmp_path / "other" / "img_t0.png"],
                           tmp_path / "out2")
