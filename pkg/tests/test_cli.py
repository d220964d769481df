import json

import numpy as np
import pytest
from PIL import Image

from lfdepth.cli import main
from lfdepth.io import read_pfm, write_pfm
from lfdepth.viz import NAN_COLOR

from conftest import two_layer


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "scene.json"
    two_layer(rect=(8, 8, 18, 18), scale=4).save(spec)
    out = root / "lf"
    assert main(["synth", "--scene", str(spec), "--out", str(out), "--views", "3", "3", "--size", "24", "24"]) == 0
    return root, out


def test_synth_writes_frames_and_ground_truth(synth_dir):
    _, out = synth_dir
    assert len(list(out.glob("input_Cam*.png"))) == 9
    assert len(list(out.glob("gt_*.pfm"))) == 9
    assert (out / "manifest.json").is_file()


def test_synth_is_deterministic(synth_dir, tmp_path):
    root, out = synth_dir
    again = tmp_path / "again"
    main(["synth", "--scene", str(root / "scene.json"), "--out", str(again), "--views", "3", "3", "--size", "24", "24"])
    for p in sorted(out.iterdir()):
        assert (again / p.name).read_bytes() == p.read_bytes()


def test_synth_rejects_invalid_spec(tmp_path, capsys):
    spec = tmp_path / "bad.json"
    d = two_layer().to_dict()
    d["layers"] = d["layers"][1:]  # foreground only, no background
    spec.write_text(json.dumps(d))
    assert main(["synth", "--scene", str(spec), "--out", str(tmp_path / "o")]) == 1
    assert "background" in capsys.readouterr().err


def test_estimate_center_only(synth_dir, tmp_path):
    _, lf = synth_dir
    out = tmp_path / "est"
    assert main(["estimate", "--input", str(lf / "manifest.json"), "--output", str(out), "--views", "center"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["depth_01_01.pfm", "run.json"]
    meta = json.loads((out / "run.json").read_text())
    assert meta["config"]["views_mode"] == "center"
    assert {"edges", "center"} <= set(meta["timings"])
    assert meta["label_counts"]["center_labels"] > 0


def test_estimate_all_and_eval(synth_dir, tmp_path, capsys):
    _, lf = synth_dir
    out = tmp_path / "est"
    assert main(["estimate", "--input", str(lf / "manifest.json"), "--output", str(out), "--threads", "2"]) == 0
    assert len(list(out.glob("depth_*.pfm"))) == 9
    report = tmp_path / "r.json"
    assert main(["eval", "--est", str(out), "--gt", str(lf), "--report", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert set(rep) == {"views", "accuracy", "consistency", "global"}
    assert {"mse_x100", "bad_001", "bad_003", "bad_007"} <= set(rep["accuracy"]["01_01"])
    assert "mse_x100" in capsys.readouterr().out


def test_config_file_merges_under_flags(synth_dir, tmp_path):
    _, lf = synth_dir
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"views_mode": "all", "threads": 1}))
    out = tmp_path / "est"
    args = ["estimate", "--input", str(lf / "manifest.json"), "--output", str(out), "--config", str(cfg)]
    assert main(args + ["--views", "center"]) == 0
    assert json.loads((out / "run.json").read_text())["config"]["views_mode"] == "center"


def test_bad_config_exit_1(synth_dir, tmp_path):
    _, lf = synth_dir
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    out = tmp_path / "est"
    assert main(["estimate", "--input", str(lf / "manifest.json"), "--output", str(out), "--config", str(cfg)]) == 1
    assert not out.exists()


def test_missing_manifest_exit_1(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "manifest.json"
    assert main(["estimate", "--input", str(missing), "--output", str(tmp_path / "o")]) == 1
    assert str(missing) in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_textureless_estimate_cleans_up(tmp_path):
    from lfdepth.core import LightField
    from lfdepth.io import save_lightfield

    path = save_lightfield(LightField(np.full((3, 3, 12, 12, 3), 0.5)), tmp_path / "flat")
    out = tmp_path / "est"
    assert main(["estimate", "--input", str(path), "--output", str(out)]) == 1
    assert not out.exists()


def test_eval_identity(synth_dir, tmp_path):
    _, lf = synth_dir
    report = tmp_path / "r.json"
    assert main(["eval", "--est", str(lf), "--gt", str(lf), "--target-view", "1", "1", "--report", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["global"]["mse_x100"] == 0.0
    assert rep["consistency"]["consistency_mean"] == 0.0


def test_eval_missing_views(synth_dir, tmp_path, capsys):
    _, lf = synth_dir
    est = tmp_path / "est"
    est.mkdir()
    write_pfm(est / "depth_05_05.pfm", np.zeros((24, 24)))
    assert main(["eval", "--est", str(est), "--gt", str(lf), "--report", str(tmp_path / "r.json")]) == 1
    assert "5,5" in capsys.readouterr().err


def test_heatmap_modes(tmp_path):
    disp = np.full((6, 5), 0.4)
    disp[2, 3] = np.nan
    write_pfm(tmp_path / "a.pfm", disp)
    assert main(["heatmap", "--input", str(tmp_path / "a.pfm"), "--out", str(tmp_path / "a.png")]) == 0
    img = np.asarray(Image.open(tmp_path / "a.png"))
    assert tuple(img[2, 3]) == NAN_COLOR
    assert len({tuple(p) for p in img.reshape(-1, 3)}) == 2
    args = ["heatmap", "--input", str(tmp_path / "a.pfm"), "--out", str(tmp_path / "e.png")]
    assert main(args + ["--mode", "error", "--ref", str(tmp_path / "a.pfm")]) == 0
    assert main(args + ["--mode", "error"]) == 1
    assert main(args + ["--range", "1", "0"]) == 1
    assert read_pfm(tmp_path / "a.pfm").shape == (6, 5)
