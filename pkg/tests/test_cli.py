import json

import numpy as np
import pytest

from activescout import cli, io_formats
from activescout.field import FieldGrid

FAST = [
    "--scene_seed", "3", "--rooms", "1", "--objects", "3",
    "--categories", "6", "--image_size", "12", "--init_steps", "80",
    "--iter_steps", "40", "--final_steps", "0", "--rays_per_step", "48",
    "--n_candidates", "2", "--views_per_trajectory", "4",
    "--resolutions", "16,12", "--max_iterations", "1",
    "--n_samples_train", "16", "--n_samples_render", "12",
]


def test_config_hash_stable_under_key_order():
    a = cli.config_hash({"a": 1, "b": [2, 3]})
    b = cli.config_hash({"b": [2, 3], "a": 1})
    assert a == b and len(a) == 16
    assert cli.config_hash({"a": 2}) != a


def test_load_config_overrides_and_validation(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"rooms": 3, "resolutions": [32, 16]}))
    cfg = cli.load_config(p, {"objects": "5", "hfov_deg": "75.5"})
    assert cfg.rooms == 3
    assert cfg.objects == 5
    assert cfg.hfov_deg == 75.5
    assert cfg.resolutions == (32, 16)
    with pytest.raises(cli.ConfigError):
        cli.load_config(p, {"not_a_field": "1"})
    with pytest.raises(cli.ConfigError):
        cli.load_config(tmp_path / "missing.json", {})
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(cli.ConfigError):
        cli.load_config(bad, {})
    with pytest.raises(cli.ConfigError):
        cli.load_config(None, {"method": "teleport"})


def test_parse_overrides():
    assert cli._parse_overrides(["--image-size", "16", "--seed", "3"]) == {
        "image_size": "16", "seed": "3"}
    with pytest.raises(cli.ConfigError):
        cli._parse_overrides(["--seed"])
    with pytest.raises(cli.ConfigError):
        cli._parse_overrides(["seed", "3"])


def test_explore_writes_manifest(tmp_path):
    rc = cli.main(["explore", "--out", str(tmp_path), "--name", "t"] + FAST)
    assert rc == cli.EXIT_OK
    run = tmp_path / "t"
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["config_hash"] == cli.config_hash(manifest["config"])
    assert manifest["termination_reason"]
    assert manifest["finished_unix"] >= manifest["started_unix"]
    assert (run / "metrics.csv").exists()

    # eval consumes the run directory
    rc = cli.main(["eval", str(run)])
    assert rc == cli.EXIT_OK
    ovd = (run / "eval" / "objects_vs_distance.csv").read_text().splitlines()
    assert ovd[0] == "distance_m,objects_localized"
    assert len(ovd) >= 2
    rec = (run / "eval" / "recon_curves.csv").read_text().splitlines()
    assert rec[0] == "iteration,psnr_db,depth_mse,semantic_ce"


def test_baseline_command(tmp_path):
    rc = cli.main(["baseline", "--method", "frequency", "--out",
                   str(tmp_path), "--name", "f"] + FAST)
    assert rc == cli.EXIT_OK
    manifest = json.loads((tmp_path / "f" / "manifest.json").read_text())
    assert manifest["config"]["method"] == "frequency"


def test_exit_codes(tmp_path):
    # config error: unknown key
    rc = cli.main(["explore", "--out", str(tmp_path), "--warp", "9"])
    assert rc == cli.EXIT_CONFIG
    # runtime error: eval on a directory without metrics
    rc = cli.main(["eval", str(tmp_path)])
    assert rc == cli.EXIT_CONFIG  # missing metrics is a usage problem
    # runtime error: unreadable checkpoint
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"junk")
    rc = cli.main(["render", str(bad), "--pose", "0,0,1,0",
                   "--output", str(tmp_path / "r")])
    assert rc == cli.EXIT_RUNTIME


def test_render_command(tmp_path):
    field = FieldGrid(np.zeros(3), np.array([2.0, 2.0, 2.0]), (8, 8, 8), 4,
                      rng=np.random.default_rng(0))
    ckpt = tmp_path / "field.ckpt"
    io_formats.save_checkpoint(field, ckpt)
    out = tmp_path / "renders"
    rc = cli.main(["render", str(ckpt), "--pose", "1,1,1,0.5",
                   "--output", str(out), "--size", "8", "--n-samples", "8"])
    assert rc == cli.EXIT_OK
    for name in ("rgb_pred", "rgb_uncertainty", "depth_pred",
                 "depth_uncertainty", "semantic_pred",
                 "semantic_uncertainty"):
        img = io_formats.load_ppm(out / f"{name}.ppm")
        assert img.shape == (8, 8, 3)
    assert not (out / "rgb_gt.ppm").exists()  # no scene given


def test_render_with_scene_errors(tmp_path):
    from activescout import scene as sc

    scene = sc.generate_scene(3, sc.SceneSpec(rooms=1, objects=3,
                                              categories=6))
    io_formats.save_scene(scene, tmp_path / "scene.json")
    field = FieldGrid(scene.bounds_lo, scene.bounds_hi, (8, 8, 8),
                      scene.categories)
    ckpt = tmp_path / "field.ckpt"
    io_formats.save_checkpoint(field, ckpt)
    out = tmp_path / "renders"
    pose = next(p for p in scene.eval_poses()
                if not scene.point_in_solid(p.translation))
    x, y, z = pose.translation
    yaw = float(np.arctan2(pose.rotation[1, 0], pose.rotation[0, 0]))
    rc = cli.main(["render", str(ckpt), "--pose", f"{x},{y},{z},{yaw}",
                   "--output", str(out), "--size", "8", "--n-samples", "8",
                   "--scene", str(tmp_path / "scene.json")])
    assert rc == cli.EXIT_OK
    for name in ("rgb_gt", "rgb_error", "depth_gt", "depth_error",
                 "semantic_gt", "semantic_error"):
        assert (out / f"{name}.ppm").exists()


def test_linear_demo_output(capsys):
    rc = cli.main(["linear-demo", "--dim", "2", "--horizon", "5",
                   "--seed", "0"])
    assert rc == cli.EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "t,objective,angle_deg"
    assert len(lines) == 6
    for line in lines[1:]:
        t, val, angle = line.split(",")
        assert np.isfinite(float(val))
        assert 0.0 <= float(angle) <= 90.0


def test_out_root_env_var(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ACTIVESCOUT_OUT", str(tmp_path / "envroot"))
    rc = cli.main(["explore", "--name", "e"] + FAST)
    assert rc == cli.EXIT_OK
    assert (tmp_path / "envroot" / "e" / "manifest.json").exists()
