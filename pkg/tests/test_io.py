import json

import numpy as np
import pytest

from deerct.config import ExperimentConfig
from deerct.data import build_split, manifest_hash, read_split, split_seeds, write_dataset
from deerct.rasterio import (CorruptFileError, load_checkpoint, load_raster, save_checkpoint, save_png,
                             save_raster)


def small_cfg(**kw):
    base = dict(n=16, n_det=16, nv_few=5, nv_dense=10, n_train=3, n_val=2, n_test=2)
    base.update(kw)
    return ExperimentConfig(**base)


# -- config -------------------------------------------------------------------

def test_config_defaults_follow_training_recipe():
    cfg = ExperimentConfig()
    assert (cfg.batch_pretrain, cfg.batch_joint, cfg.epochs_pretrain) == (5, 3, 10)
    assert (cfg.beta1, cfg.beta2, cfg.bp_lr_ratio) == (0.9, 0.999, 0.1)
    assert (cfg.n_train, cfg.n_val, cfg.n_test) == (2000, 200, 200)
    assert cfg.variant == "deer-nowgan" and cfg.lambda_al == 0.0 and cfg.lambda_sl == 0.8


def test_variant_presets():
    assert ExperimentConfig.for_variant("deer").lambda_al == 0.0025
    assert ExperimentConfig.for_variant("deer-nowgan").lambda_al == 0.0
    assert ExperimentConfig.for_variant("deer-lite", n=32).n == 32


def test_config_toml_round_trip(tmp_path):
    cfg = small_cfg(variant="deer-lite", lr_base=3e-4, unet_bias=True)
    cfg.save(tmp_path / "c.toml")
    back = ExperimentConfig.load(tmp_path / "c.toml")
    assert back == cfg and back.hash() == cfg.hash()


def test_unknown_keys_rejected(tmp_path):
    (tmp_path / "c.toml").write_text('n = 16\nlearning_rate = 0.1\n')
    with pytest.raises(ValueError, match="learning_rate"):
        ExperimentConfig.load(tmp_path / "c.toml")


@pytest.mark.parametrize("bad", [dict(n=4), dict(variant="deer-xl"), dict(lambda_sl=-1.0), dict(lr_base=0.0),
                                 dict(beta2=1.0), dict(padding="reflect"), dict(n_train=0), dict(n=16.5),
                                 dict(unet_bias=1)])
def test_invalid_values_rejected(bad):
    with pytest.raises(ValueError, match="invalid config"):
        ExperimentConfig(**bad)


def test_hash_ignores_output_location_only():
    a = small_cfg(out_dir="x")
    assert a.hash() == small_cfg(out_dir="y").hash()
    assert a.hash() != small_cfg(seed=1).hash()


# -- rasters and checkpoints ---------------------------------------------------------

def test_raster_round_trip_is_bitwise(tmp_path):
    data = np.random.default_rng(0).normal(size=(3, 5, 7)).astype(np.float32)
    save_raster(tmp_path / "a.raw", data, pixel_size=0.5, angles=[0.0, 1.0])
    back, meta = load_raster(tmp_path / "a.raw")
    assert back.tobytes() == data.tobytes() and back.shape == data.shape
    assert meta == {"pixel_size": 0.5, "angles": [0.0, 1.0]}
    blob = (tmp_path / "a.raw").read_bytes()
    assert len(blob) - blob.index(b"\n", 9) - 1 == data.size * 4


def test_raster_corruption_detected(tmp_path):
    save_raster(tmp_path / "a.raw", np.ones((4, 4)))
    blob = (tmp_path / "a.raw").read_bytes()
    (tmp_path / "short.raw").write_bytes(blob[:-3])
    (tmp_path / "magic.raw").write_bytes(b"X" + blob[1:])
    with pytest.raises(CorruptFileError, match="payload"):
        load_raster(tmp_path / "short.raw")
    with pytest.raises(CorruptFileError, match="magic"):
        load_raster(tmp_path / "magic.raw")


def test_checkpoint_round_trip_and_corruption(tmp_path):
    arrays = {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "m": np.ones(4, np.float64)}
    save_checkpoint(tmp_path / "c.ckpt", arrays, {"epoch": 3})
    back, meta = load_checkpoint(tmp_path / "c.ckpt")
    assert meta["epoch"] == 3
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and np.array_equal(back[k], v)
    blob = (tmp_path / "c.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(blob + b"\0")
    with pytest.raises(CorruptFileError, match="payload"):
        load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "h.ckpt").write_bytes(blob[:9] + b"{not json\n" + blob[9:])
    with pytest.raises(CorruptFileError, match="header"):
        load_checkpoint(tmp_path / "h.ckpt")


def test_png_is_windowed(tmp_path):
    from PIL import Image as PILImage

    save_png(tmp_path / "a.png", np.array([[-1.0, 0.0], [0.5, 2.0]]), window=(0.0, 1.0))
    px = np.asarray(PILImage.open(tmp_path / "a.png"))
    assert px.tolist() == [[0, 0], [128, 255]]
    with pytest.raises(ValueError):
        save_png(tmp_path / "b.png", np.zeros((2, 2)), window=(1.0, 1.0))


# -- datasets --------------------------------------------------------------------

def test_split_seeds_are_disjoint_and_sized():
    seeds = split_seeds(ExperimentConfig())
    assert [len(seeds[s]) for s in ("train", "val", "test")] == [2000, 200, 200]
    assert not (set(seeds["train"]) & set(seeds["val"]) or set(seeds["train"]) & set(seeds["test"])
                or set(seeds["val"]) & set(seeds["test"]))


def test_dataset_manifest_is_deterministic(tmp_path):
    cfg = small_cfg()
    m = write_dataset(cfg, tmp_path / "a")
    write_dataset(cfg, tmp_path / "b")
    assert manifest_hash(tmp_path / "a" / "manifest.json") == manifest_hash(tmp_path / "b" / "manifest.json")
    assert {s: m["files"][s]["count"] for s in m["files"]} == {"train": 3, "val": 2, "test": 2}
    for split in ("train", "val", "test"):
        _, meta = load_raster(tmp_path / "a" / f"{split}_fewview.raw")
        assert meta["nv_few"] == 5 and meta["nv_dense"] == 10 and len(meta["angles"]) == 5
    assert ExperimentConfig.load(tmp_path / "a" / "config.toml") == cfg


def test_read_split_matches_in_memory_simulation(tmp_path):
    cfg = small_cfg()
    write_dataset(cfg, tmp_path)
    disk = read_split(tmp_path, "val", cfg.nv_dense)
    mem = build_split(cfg, "val")
    np.testing.assert_array_equal(disk.gt, mem.gt)
    np.testing.assert_allclose(disk.filtered, mem.filtered, atol=1e-6)
    assert disk.filtered.shape == (2, 10, 16) and list(disk.seeds) == list(mem.seeds)
    assert json.loads((tmp_path / "manifest.json").read_text())["splits"]["val"] == list(mem.seeds)
