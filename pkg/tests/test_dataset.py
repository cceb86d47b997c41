import numpy as np
import pytest

from stseg import dataset as ds
from stseg.synth import JITTER_PRESETS, synth_scene


class TestPngRoundTrip:
    def test_image_save_load_exact(self, tmp_path):
        sample = synth_scene(4, 32, 32, 1, JITTER_PRESETS["default"])
        path = tmp_path / "img.png"
        ds.save_image(path, sample.images[0])
        back = ds.load_image(path)
        assert np.array_equal(back, sample.images[0])

    def test_mask_save_load_exact(self, tmp_path, rng):
        mask = (rng.random((24, 24)) > 0.6).astype(np.uint8)
        path = tmp_path / "m.png"
        ds.save_mask(path, mask)
        assert np.array_equal(ds.load_mask(path), mask)


class TestSceneIO:
    def test_scene_round_trip(self, tmp_path):
        sample = synth_scene(9, 32, 48, 3, JITTER_PRESETS["default"])
        ds.save_scene(tmp_path / "scene", sample)
        back = ds.load_scene(tmp_path / "scene")
        assert np.array_equal(back.label, sample.label)
        assert back.dates == sample.dates
        assert back.meta["seed"] == 9
        for a, b in zip(back.images, sample.images):
            assert np.array_equal(a, b)

    def test_missing_scene_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ds.load_scene(tmp_path / "nope")

    def test_split_listing_sorted(self, tmp_path):
        for name in ("scene_b", "scene_a"):
            ds.save_scene(tmp_path / "train" / name,
                          synth_scene(1, 16, 16, 1, JITTER_PRESETS["none"]))
        dirs = ds.list_scene_dirs(tmp_path, "train")
        assert [d.name for d in dirs] == ["scene_a", "scene_b"]

    def test_validation_rejects_mismatched_label(self):
        sample = synth_scene(2, 16, 16, 1, JITTER_PRESETS["none"])
        sample.label = sample.label[:8]
        with pytest.raises(ValueError):
            sample.validate()


class TestNormalization:
    def test_channel_stats_definition(self):
        samples = [synth_scene(s, 32, 32, 2, JITTER_PRESETS["default"])
                   for s in range(3)]
        mean, std = ds.compute_channel_stats(samples)
        stacked = np.concatenate([np.stack(s.images) for s in samples])
        want_mean = stacked.mean(axis=(0, 2, 3))
        want_std = stacked.std(axis=(0, 2, 3))
        assert np.allclose(mean, want_mean, atol=1e-6)
        assert np.allclose(std, want_std, atol=1e-5)

    def test_normalize_standardizes(self):
        samples = [synth_scene(s, 32, 32, 2, JITTER_PRESETS["default"])
                   for s in range(3)]
        mean, std = ds.compute_channel_stats(samples)
        normed = [ds.normalize_image(img, mean, std)
                  for s in samples for img in s.images]
        stacked = np.stack(normed)
        assert np.abs(stacked.mean(axis=(0, 2, 3))).max() < 1e-4
        assert np.abs(stacked.std(axis=(0, 2, 3)) - 1).max() < 1e-3

    def test_empty_stats_rejected(self):
        with pytest.raises(ValueError):
            ds.compute_channel_stats([])
