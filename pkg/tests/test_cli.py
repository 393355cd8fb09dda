import json

import numpy as np
import pytest

from hazeforge import core
from hazeforge.cli import main
from hazeforge.config import load_config


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["augment", "--data", "x"]) == 1
    assert main(["augment", "--checkpoint", "c", "--data", "d", "--count", "0"]) == 1
    assert "error" in capsys.readouterr().err


def test_runtime_errors_exit_2(tmp_path):
    assert main(["augment", "--checkpoint", str(tmp_path / "nope.pt"), "--data", str(tmp_path),
                 "--count", "1"]) == 2
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"garbage")
    assert main(["augment", "--checkpoint", str(bad), "--data", str(tmp_path), "--count", "1"]) == 2


def test_render_zero_density_returns_clean(tmp_path):
    rng = np.random.default_rng(0)
    clean = np.rint(rng.uniform(0, 1, (12, 10, 3)) * 255) / 255
    core.save_image(tmp_path / "clean.png", clean)
    core.save_param_map(tmp_path / "zero.map", np.zeros((12, 10, 3)))
    core.save_param_map(tmp_path / "A.map", np.full((12, 10, 1), 0.7))
    code = main(["render", "--clean", str(tmp_path / "clean.png"), "--beta", str(tmp_path / "zero.map"),
                 "--airlight", str(tmp_path / "A.map"), "--out", str(tmp_path / "out.png")])
    assert code == 0
    assert (tmp_path / "out.png").read_bytes() == (tmp_path / "clean.png").read_bytes()


def test_render_matches_library(tmp_path):
    rng = np.random.default_rng(1)
    clean = rng.uniform(0, 1, (8, 8, 3))
    core.save_image(tmp_path / "c.png", clean)
    clean = core.load_image(tmp_path / "c.png").data
    beta = rng.uniform(0, 2, (8, 8, 3))
    depth = rng.uniform(0, 1, (8, 8, 1))
    depth[0, 0], depth[1, 1] = 0.0, 1.0
    core.save_param_map(tmp_path / "b.hfpm", beta)
    core.save_param_map(tmp_path / "a.hfpm", np.full((8, 8, 1), 0.5))
    core.save_param_map(tmp_path / "d.hfpm", depth)
    assert main(["render", "--clean", str(tmp_path / "c.png"), "--beta", str(tmp_path / "b.hfpm"),
                 "--airlight", str(tmp_path / "a.hfpm"), "--depth", str(tmp_path / "d.hfpm"),
                 "--out", str(tmp_path / "o.png")]) == 0
    b32 = beta.astype(np.float32).astype(np.float64)
    d32 = core.normalize_depth(depth.astype(np.float32).astype(np.float64)).data
    t = np.exp(-b32 * d32)
    expect = core.to_uint8(clean * t + 0.5 * (1 - t))
    np.testing.assert_array_equal(core.to_uint8(core.load_image(tmp_path / "o.png").data), expect)


def test_eval_self(tiny_dataset, capsys, tmp_path):
    assert main(["eval", str(tiny_dataset / "clean"), str(tiny_dataset / "clean"), "--out",
                 str(tmp_path / "t.csv")]) == 0
    out = capsys.readouterr().out
    assert "mean,inf,1.000000" in out
    assert (tmp_path / "t.csv").read_text().strip().endswith("mean,inf,1.000000")


def test_train_augment_replay(tmp_path, tiny_dataset, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"""
[mapper]
variant = toy
seed = 2

[train]
epochs = 1
crop = 32
lr_init = 1e-3
lr_final = 1e-6

[data]
root = {tiny_dataset}

[policy]
weight_scale = 1
weight_reverse = 1
weight_interpolate = 0
weight_compose = 0
""")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    ckpt = tmp_path / "run" / "checkpoint.pt"
    assert ckpt.exists() and (tmp_path / "run" / "train_log.csv").exists()
    out = tmp_path / "aug"
    assert main(["augment", "--checkpoint", str(ckpt), "--data", str(tiny_dataset), "--count", "4",
                 "--seed", "3", "--out", str(out), "--config", str(cfg)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["entries"]) == 4
    assert {e["spec"]["strategy"] for e in manifest["entries"]} <= {"scale", "reverse"}
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "replayed")]) == 0
    for e in manifest["entries"]:
        rel = e["output_paths"]["hazy"]
        assert (tmp_path / "replayed" / rel).read_bytes() == (out / rel).read_bytes()

    # tampering with a recorded hash makes replay fail
    manifest["entries"][0]["sha256"]["hazy"] = "0" * 64
    (out / "manifest.json").write_text(json.dumps(manifest))
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "r2")]) == 2


def test_config_parsing(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("""
[mapper]
variant = paper
[train]
epochs = 5
use_dhr = no
[depth]
kind = plugin
source = dark_channel
[data]
root = somewhere
[policy]
alpha_min = 0.8
fill_max = 1.0
""")
    cfg = load_config(p)
    assert cfg.mapper.base_channels == 21 and cfg.mapper.depth_levels == 3
    assert cfg.train.epochs == 5 and cfg.train.use_dhr is False and cfg.train.lr_init == 5e-5
    assert cfg.depth.kind == "plugin"
    assert cfg.data_root == str(tmp_path / "somewhere")
    assert cfg.policy.alpha_range == (0.8, 2.0) and cfg.policy.fill_range == (0.6, 1.0)


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[train]\nlearning_rate = 1\n")
    with pytest.raises(ValueError):
        load_config(p)
