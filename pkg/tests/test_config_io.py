import json

import numpy as np
import pytest

from posmlp_video.checkpoint import load_arrays, load_checkpoint, model_arrays, read_checkpoint, save_checkpoint
from posmlp_video.config import ModelConfig, preset
from posmlp_video.export import export_relations, relation_matrices
from posmlp_video.network import PosMLPVideo, image_mode_forward
from posmlp_video import rpe
from posmlp_video.tensor import Tensor, cross_entropy


# ------------------------------------------------------------- config


@pytest.mark.parametrize("name,depths,r", [("S", (3, 4, 9, 3), 2), ("B", (4, 6, 15, 4), 2), ("L", (4, 6, 15, 4), 4)])
def test_presets(name, depths, r):
    cfg = preset(name).validate()
    assert cfg.depths == depths and cfg.expansion == r
    assert cfg.channels == (72, 144, 288, 576) and cfg.groups == (8, 16, 32, 64)
    assert cfg.windows == ((16, 14, 14),) * 3 + ((16, 7, 7),)


def test_json_roundtrip(tmp_path):
    cfg = preset("toy", block_variant="joint", drop_path_rate=0.1)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert ModelConfig.from_json(path) == cfg


def test_shipped_config_files_load():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    for name in ("S", "B", "L", "toy", "micro"):
        assert ModelConfig.from_json(root / f"{name}.json") == preset(name)


def test_partial_json_starts_from_preset():
    cfg = ModelConfig.from_dict({"variant": "L", "num_classes": 174})
    assert cfg.expansion == 4 and cfg.num_classes == 174


def test_unknown_keys_rejected():
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"variant": "S", "heads": 8})


@pytest.mark.parametrize("override", [
    dict(groups=(8, 16, 32)),
    dict(block_variant="mixer"),
    dict(patch_version="v4"),
    dict(input_size=(16, 222, 224)),
    dict(groups=(7, 16, 32, 64)),
    dict(windows=((16, 14, 14), (16, 14, 14), (16, 14, 14), (16, 6, 6))),
    dict(input_size=(20, 224, 224)),
])
def test_invalid_configs(override):
    with pytest.raises(ValueError):
        preset("S", **override).validate()


def test_unknown_preset():
    with pytest.raises(ValueError):
        preset("XL")


# ------------------------------------------------------------- checkpoints


def trained_micro(rng, **kw):
    cfg = preset("micro", **kw)
    m = PosMLPVideo(cfg, seed=3)
    t, h, w = cfg.input_size
    m(Tensor(rng.standard_normal((2, t, h, w, 3))))  # running stats
    for p in m.parameters():
        p.data += rng.standard_normal(p.shape) * 0.01
    return m


def test_checkpoint_roundtrip(tmp_path, rng):
    m = trained_micro(rng)
    save_checkpoint(m, tmp_path / "m.npz")
    back = load_checkpoint(tmp_path / "m.npz")
    assert back.config == m.config
    for (k, a), (k2, b) in zip(m.named_parameters(), back.named_parameters()):
        assert k == k2 and np.array_equal(a.data, b.data)
    x = Tensor(rng.standard_normal((2, 4, 16, 16, 3)))
    m.eval(), back.eval()
    assert np.array_equal(m(x).data, back(x).data)


def test_checkpoint_keys_are_parameter_paths(tmp_path, rng):
    m = trained_micro(rng)
    _, arrays = read_checkpoint(save_checkpoint(m, tmp_path / "m.npz"))
    assert "stage2.block1.spatial.fc1.weight" in arrays
    assert "patch_embed.bn1.stats.running_var" in arrays
    assert all(a.dtype == np.float64 for a in arrays.values())


def test_shape_mismatch_rejected(tmp_path, rng):
    m = trained_micro(rng)
    arrays = model_arrays(m)
    arrays["head.fc.weight"] = np.zeros((3, 3))
    with pytest.raises(ValueError):
        load_arrays(PosMLPVideo(m.config), arrays)


def test_missing_and_unknown_entries(rng):
    m = trained_micro(rng)
    arrays = model_arrays(m)
    del arrays["head.fc.bias"]
    with pytest.raises(KeyError):
        load_arrays(PosMLPVideo(m.config), arrays)
    assert load_arrays(PosMLPVideo(m.config), arrays, allow_missing=True) == ["head.fc.bias"]
    arrays["extra.weight"] = np.zeros(2)
    with pytest.raises(KeyError):
        load_arrays(PosMLPVideo(m.config), arrays, allow_missing=True)


def test_image_checkpoint_transfers_to_video(tmp_path, rng):
    img_cfg = preset("micro", input_size=(1, 16, 16))
    img = PosMLPVideo(img_cfg, seed=5)
    x = Tensor(rng.standard_normal((2, 1, 16, 16, 3)))
    cross_entropy(image_mode_forward(img, x, train=True), np.array([0, 1])).backward()
    for p in img.parameters():
        if p.grad is not None:
            p.data -= 0.1 * p.grad
    path = save_checkpoint(img, tmp_path / "img.npz", image_mode=True)
    _, arrays = read_checkpoint(path)
    assert not set(arrays) & img.temporal_parameter_names()

    video_cfg = preset("micro")
    with pytest.raises(KeyError):
        load_checkpoint(path, config=video_cfg)
    video = load_checkpoint(path, allow_missing=True, config=video_cfg, seed=11)
    fresh = PosMLPVideo(video_cfg, seed=11)
    vp, fp, ip = dict(video.named_parameters()), dict(fresh.named_parameters()), dict(img.named_parameters())
    for name in video.temporal_parameter_names():
        assert np.array_equal(vp[name].data, fp[name].data)
    for name in ip:
        if name not in img.temporal_parameter_names():
            assert np.array_equal(vp[name].data, ip[name].data)


# ------------------------------------------------------------- relation export


def test_export_relations(tmp_path, rng):
    m = trained_micro(rng, depths=(1, 2, 1, 1))
    manifest = json.loads(export_relations(m, tmp_path / "rel").read_text())
    cfg = m.config
    # two positional units per V1 block, g matrices each
    assert len(manifest["matrices"]) == sum(d * 2 * g for d, g in zip(cfg.depths, cfg.groups))
    mats = relation_matrices(m)
    for entry in manifest["matrices"]:
        back = rpe.read_csv(tmp_path / "rel" / entry["csv"])
        np.testing.assert_allclose(back, mats[entry["name"]], rtol=0, atol=1e-12)
        assert rpe.read_pgm(tmp_path / "rel" / entry["pgm"]).shape == back.shape
        assert rpe.is_block_toeplitz(back, entry["extents"])


def test_export_fresh_model_toeplitz(tmp_path):
    m = PosMLPVideo(preset("micro", block_variant="joint"))
    manifest = json.loads(export_relations(m, tmp_path).read_text())
    assert len(manifest["matrices"]) == sum(m.config.groups)
    for e in manifest["matrices"]:
        assert e["kind"] == "postgu" and rpe.is_block_toeplitz(rpe.read_csv(tmp_path / e["csv"]), e["extents"])


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        export_relations(PosMLPVideo(preset("micro")), blocker / "sub")
