import json
from pathlib import Path

import numpy as np
import pytest

from stseg import dataset as ds
from stseg import tensorio
from stseg.convlstm import ConvLstmConfig
from stseg.synth import JITTER_PRESETS, synth_scene
from stseg.train import (TrainConfig, generate_pmap_sequences, load_fcn_checkpoint,
                         load_pmap_sequence, parse_schedule, train_fcn, train_rnn)
from stseg.unet import UNetConfig

TOY_UNET = UNetConfig(in_channels=3, base_filters=4, depth=2, num_classes=2)
TOY_RNN = ConvLstmConfig(input_channels=2, hidden_filters=4, layers=2)


@pytest.fixture(scope="module")
def toy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("toyset")
    idx = 0
    for split, count in (("train", 3), ("val", 1)):
        for _ in range(count):
            sample = synth_scene(idx, 32, 32, 3, JITTER_PRESETS["default"])
            ds.save_scene(root / split / f"scene_{idx:03d}", sample)
            idx += 1
    return root


def toy_cfg(stage, seed=0, epochs=((2, 1e-3),)):
    return TrainConfig(stage=stage, lr_schedule=epochs, batches_per_epoch=2,
                       batch_size=2, seed=seed, crop=16)


class TestTrainConfig:
    def test_increasing_lr_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(stage="fcn", lr_schedule=((2, 0.01), (2, 0.1)))

    def test_bad_stage_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(stage="both")

    def test_schedule_parsing(self):
        assert parse_schedule("2:0.1,2:0.01") == ((2, 0.1), (2, 0.01))


class TestTrainFcn:
    def test_smoke_descent_and_outputs(self, toy_dataset, tmp_path):
        res = train_fcn(toy_dataset, TOY_UNET,
                        toy_cfg("fcn", epochs=((3, 2e-3),)), tmp_path / "run")
        log_lines = [json.loads(l) for l in
                     (tmp_path / "run" / "log.jsonl").read_text().splitlines()]
        assert len(log_lines) == 3
        assert set(log_lines[0]) == {"epoch", "lr", "loss", "H", "J",
                                     "acc_train", "acc_val"}
        assert log_lines[-1]["loss"] < log_lines[0]["loss"]
        assert Path(res["best"]).exists() and Path(res["last"]).exists()

    def test_schedule_echoed_in_log(self, toy_dataset, tmp_path):
        cfg = toy_cfg("fcn", epochs=((2, 1e-2), (2, 1e-3)))
        train_fcn(toy_dataset, TOY_UNET, cfg, tmp_path / "run")
        lines = [json.loads(l) for l in
                 (tmp_path / "run" / "log.jsonl").read_text().splitlines()]
        assert [l["lr"] for l in lines] == [1e-2, 1e-2, 1e-3, 1e-3]

    def test_deterministic_reruns_byte_identical(self, toy_dataset, tmp_path):
        for d in ("a", "b"):
            train_fcn(toy_dataset, TOY_UNET, toy_cfg("fcn"), tmp_path / d)
        assert ((tmp_path / "a" / "log.jsonl").read_bytes()
                == (tmp_path / "b" / "log.jsonl").read_bytes())
        assert ((tmp_path / "a" / "ckpt_last.sttc").read_bytes()
                == (tmp_path / "b" / "ckpt_last.sttc").read_bytes())

    def test_seed_changes_results(self, toy_dataset, tmp_path):
        train_fcn(toy_dataset, TOY_UNET, toy_cfg("fcn", seed=0), tmp_path / "a")
        train_fcn(toy_dataset, TOY_UNET, toy_cfg("fcn", seed=1), tmp_path / "b")
        assert ((tmp_path / "a" / "ckpt_last.sttc").read_bytes()
                != (tmp_path / "b" / "ckpt_last.sttc").read_bytes())

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            train_fcn(tmp_path / "nothing", TOY_UNET, toy_cfg("fcn"),
                      tmp_path / "run")


@pytest.fixture(scope="module")
def fcn_run(toy_dataset, tmp_path_factory):
    run = tmp_path_factory.mktemp("fcnrun")
    return train_fcn(toy_dataset, TOY_UNET, toy_cfg("fcn"), run)


@pytest.fixture(scope="module")
def staged(toy_dataset, tmp_path_factory):
    base = tmp_path_factory.mktemp("staged")
    res = train_fcn(toy_dataset, TOY_UNET, toy_cfg("fcn"), base / "fcn")
    cache = base / "cache"
    generate_pmap_sequences(res["best"], toy_dataset, cache)
    return base, res, cache


class TestPmapCache:
    def test_cache_layout_and_normalization(self, fcn_run, toy_dataset, tmp_path):
        cache = tmp_path / "cache"
        manifest = generate_pmap_sequences(fcn_run["best"], toy_dataset, cache)
        assert manifest.exists()
        seq = load_pmap_sequence(cache, "train", "scene_000")
        assert seq.shape == (3, 2, 32, 32)
        # probability maps: per-pixel channel sums are one
        assert np.abs(seq.sum(axis=1) - 1.0).max() < 1e-5

    def test_rerun_bit_identical(self, fcn_run, toy_dataset, tmp_path):
        caches = []
        for d in ("c1", "c2"):
            generate_pmap_sequences(fcn_run["best"], toy_dataset, tmp_path / d)
            caches.append((tmp_path / d / "train" / "scene_000" /
                           "pmap_t0.stt1").read_bytes())
        assert caches[0] == caches[1]

    def test_wrong_checkpoint_kind_rejected(self, fcn_run, toy_dataset, tmp_path):
        # a sidecar claiming the wrong kind must be refused
        ckpt = Path(fcn_run["best"])
        bad = tmp_path / "bad.sttc"
        bad.write_bytes(ckpt.read_bytes())
        sidecar = json.loads(ckpt.with_suffix(".json").read_text())
        sidecar["kind"] = "rnn"
        bad.with_suffix(".json").write_text(json.dumps(sidecar))
        with pytest.raises(ValueError):
            generate_pmap_sequences(bad, toy_dataset, tmp_path / "cache")


class TestTrainRnn:
    def test_smoke_descent_and_frozen_backbone(self, staged, toy_dataset):
        base, fcn_res, cache = staged
        before = Path(fcn_res["best"]).read_bytes()
        res = train_rnn(toy_dataset, cache, TOY_RNN,
                        toy_cfg("rnn", epochs=((5, 2e-3),)), base / "rnn")
        lines = [json.loads(l) for l in
                 (base / "rnn" / "log.jsonl").read_text().splitlines()]
        assert lines[-1]["loss"] < lines[0]["loss"]
        assert Path(fcn_res["best"]).read_bytes() == before
        assert set(lines[0]) == {"epoch", "lr", "loss", "H", "J",
                                 "acc_train", "acc_val"}
        assert Path(res["best"]).exists()

    def test_incomplete_cache_rejected(self, staged, toy_dataset, tmp_path):
        base, _, cache = staged
        broken = tmp_path / "broken_cache"
        import shutil
        shutil.copytree(cache, broken)
        (broken / "train" / "scene_000" / "pmap_t1.stt1").unlink()
        with pytest.raises((ValueError, FileNotFoundError)):
            train_rnn(toy_dataset, broken, TOY_RNN, toy_cfg("rnn"),
                      tmp_path / "run")

    def test_rnn_reruns_deterministic(self, staged, toy_dataset, tmp_path):
        base, _, cache = staged
        for d in ("r1", "r2"):
            train_rnn(toy_dataset, cache, TOY_RNN, toy_cfg("rnn"), tmp_path / d)
        assert ((tmp_path / "r1" / "log.jsonl").read_bytes()
                == (tmp_path / "r2" / "log.jsonl").read_bytes())


class TestCheckpointSidecar:
    def test_fcn_checkpoint_round_trip(self, toy_dataset, tmp_path):
        res = train_fcn(toy_dataset, TOY_UNET, toy_cfg("fcn"), tmp_path / "run")
        store, cfg, mean, std = load_fcn_checkpoint(res["best"])
        assert cfg == TOY_UNET
        assert mean.shape == (3,) and std.shape == (3,)
        state = tensorio.load_container(res["best"])
        for name, arr in state.items():
            assert np.array_equal(store[name].data, arr)
