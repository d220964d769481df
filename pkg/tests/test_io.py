import json

import numpy as np
import pytest
from PIL import Image

from lfdepth.core import DepthMap, LightField
from lfdepth.io import (
    LoadError,
    Manifest,
    PfmError,
    depth_name,
    load_lightfield,
    manifest_from_hci,
    read_depth_dir,
    read_pfm,
    save_lightfield,
    write_pfm,
)


def test_pfm_round_trip(tmp_path, rng):
    disp = rng.uniform(-2, 2, (7, 11)).astype(np.float32).astype(np.float64)
    disp[3, 4] = np.nan
    write_pfm(tmp_path / "a.pfm", DepthMap(disp))
    back = read_pfm(tmp_path / "a.pfm")
    np.testing.assert_array_equal(back.disp, disp)
    assert not back.valid[3, 4]


def test_pfm_layout_is_bottom_up_little_endian(tmp_path):
    disp = np.array([[1.0, 2.0], [3.0, 4.0]])
    write_pfm(tmp_path / "a.pfm", disp)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    body = np.frombuffer(raw[len(b"Pf\n2 2\n-1.0\n") :], "<f4")
    assert body.tolist() == [3.0, 4.0, 1.0, 2.0]


def test_pfm_big_endian(tmp_path):
    body = np.array([[5.0, 6.0, 7.0]], dtype=">f4").tobytes()
    (tmp_path / "b.pfm").write_bytes(b"Pf\n3 1\n1.0\n" + body)
    assert read_pfm(tmp_path / "b.pfm").disp.tolist() == [[5.0, 6.0, 7.0]]


def test_pfm_color_rejected(tmp_path):
    (tmp_path / "c.pfm").write_bytes(b"PF\n1 1\n-1.0\n" + b"\0" * 12)
    with pytest.raises(PfmError, match="PF"):
        read_pfm(tmp_path / "c.pfm")


def test_pfm_truncated(tmp_path):
    (tmp_path / "t.pfm").write_bytes(b"Pf\n4 4\n-1.0\n" + b"\0" * 20)
    with pytest.raises(PfmError, match="truncated"):
        read_pfm(tmp_path / "t.pfm")


def test_pfm_garbage(tmp_path):
    (tmp_path / "g.pfm").write_bytes(b"hello")
    with pytest.raises(PfmError):
        read_pfm(tmp_path / "g.pfm")


def test_manifest_full_size_frame_names():
    man = Manifest(width=512, height=512, views_u=9, views_v=9, disparity_min=-2, disparity_max=2)
    names = {man.frame_name(man.frame_index(u, v)) for u in range(9) for v in range(9)}
    assert len(names) == 81
    assert man.frame_name(man.frame_index(8, 8)) == "input_Cam080.png"
    col = Manifest(9, 9, 9, 9, -1, 1, index_order="column_major")
    assert col.frame_index(1, 0) == 1 and col.frame_index(0, 1) == 9


@pytest.mark.parametrize(
    "bad, field",
    [
        ({"views_u": 8}, "views_u"),
        ({"width": 0}, "width"),
        ({"index_order": "zigzag"}, "index_order"),
        ({"disparity_min": 3}, "disparity_min"),
        ({"crop": [4, 5]}, "crop"),
        ({"disparity_sign": 2}, "disparity_sign"),
    ],
)
def test_manifest_validation_names_field(bad, field):
    d = {"width": 4, "height": 4, "views_u": 9, "views_v": 9, "disparity_min": -1, "disparity_max": 1}
    d.update(bad)
    with pytest.raises(LoadError, match=field):
        Manifest.from_dict(d)


def test_manifest_missing_field():
    with pytest.raises(LoadError, match="height"):
        Manifest.from_dict({"width": 4, "views_u": 3, "views_v": 3, "disparity_min": 0, "disparity_max": 1})


def test_manifest_round_trip(tmp_path):
    man = Manifest(8, 6, 5, 3, -1.5, 2.5, crop=(3, 3), disparity_sign=-1, name="x")
    man.save(tmp_path / "m.json")
    assert Manifest.load(tmp_path / "m.json") == man


def test_missing_manifest(tmp_path):
    with pytest.raises(LoadError, match=str(tmp_path / "nope.json")):
        load_lightfield(tmp_path / "nope.json")


@pytest.fixture
def lf_dir(tmp_path, small):
    lf, _ = small
    return lf, save_lightfield(lf, tmp_path / "lf")


def test_lightfield_round_trip(lf_dir):
    lf, path = lf_dir
    back = load_lightfield(path, threads=3)
    assert back.views.shape == lf.views.shape
    assert np.abs(back.views - lf.views).max() <= 0.5 / 255 + 1e-12
    assert back.disparity_range == lf.disparity_range


def test_missing_frame_names_index(lf_dir):
    _, path = lf_dir
    (path.parent / "input_Cam007.png").unlink()
    with pytest.raises(LoadError, match="missing frame index 7"):
        load_lightfield(path)


def test_wrong_frame_size(lf_dir):
    _, path = lf_dir
    Image.new("RGB", (3, 3)).save(path.parent / "input_Cam000.png")
    with pytest.raises(LoadError, match="manifest says"):
        load_lightfield(path)


def test_crop_and_sign(tmp_path):
    U = V = 5
    views = np.zeros((U, V, 2, 2, 3))
    for u in range(U):
        for v in range(V):
            views[u, v] = (10 * u + v) / 255.0
    path = save_lightfield(LightField(views), tmp_path)
    d = json.loads(path.read_text())
    d["crop"] = [3, 3]
    path.write_text(json.dumps(d))
    lf = load_lightfield(path)
    assert lf.angular_shape == (3, 3)
    assert round(lf.views[0, 0, 0, 0, 0] * 255) == 11
    d["disparity_sign"] = -1
    path.write_text(json.dumps(d))
    flipped = load_lightfield(path)
    assert round(flipped.views[0, 0, 0, 0, 0] * 255) == 33
    assert round(flipped.views[2, 1, 0, 0, 0] * 255) == 12


def test_depth_dir(tmp_path):
    for view in [(0, 1), (2, 3)]:
        write_pfm(tmp_path / depth_name(view), np.full((2, 2), float(view[1])))
    (tmp_path / "notes.txt").write_text("x")
    maps = read_depth_dir(tmp_path)
    assert sorted(maps) == [(0, 1), (2, 3)]
    assert maps[(2, 3)].disp[0, 0] == 3.0
    assert depth_name((4, 12), "gt") == "gt_04_12.pfm"


def test_hci_shim(tmp_path):
    cfg = tmp_path / "parameters.cfg"
    cfg.write_text(
        "[intrinsics]\nimage_resolution_x_px = 512\nimage_resolution_y_px = 384\n"
        "[extrinsics]\nnum_cams_x = 9\nnum_cams_y = 7\n"
        "[meta]\ndisp_min = -1.5\ndisp_max = 1.5\nscene = boxes\n"
    )
    man = manifest_from_hci(cfg)
    assert (man.width, man.height, man.views_u, man.views_v) == (512, 384, 7, 9)
    assert (man.disparity_min, man.disparity_max, man.name) == (-1.5, 1.5, "boxes")
    (tmp_path / "bad.cfg").write_text("[meta]\n")
    with pytest.raises(LoadError):
        manifest_from_hci(tmp_path / "bad.cfg")
