import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from lfdepth.core import DegenerateInputError, Epi, Orientation, extract_epi
from lfdepth.edges import (
    EDGE_THRESHOLD,
    FILTER_WIDTH,
    G_MIN,
    MAX_LINE_WEIGHT,
    SLOPE_STEP,
    TAU_V,
    EpiLine,
    center_view_labels,
    detect_epi_edges,
    edge_weights,
    epi_label_positions,
    fit_epi_lines,
    labels_to_csv,
    line_visibility,
    offset_and_weight,
    slope_set,
)
from lfdepth.pipeline import detect_crosshair_lines
from lfdepth.synth import synth_lightfield

from conftest import plane, two_layer
from epi_oracle import brute_force_line, occluded_epi, step_epi


def nearest(lines, s0):
    return min(lines, key=lambda ln: abs(ln.s0 - s0))


def test_constants():
    assert TAU_V == math.pi / 13
    assert G_MIN == 1e-3 and EDGE_THRESHOLD == 0.1
    assert SLOPE_STEP == 0.05 and FILTER_WIDTH == 9
    assert MAX_LINE_WEIGHT == 15.0


def test_slope_set():
    s = slope_set((-1.0, 1.0))
    assert len(s) == 41 and s[0] == -1.0 and s[-1] == pytest.approx(1.0)
    assert np.allclose(np.diff(s), 0.05)
    assert slope_set((0.0, 0.12))[-1] == 0.12
    with pytest.raises(DegenerateInputError):
        slope_set((1.0, 1.0))


def test_constant_epi_has_no_edges():
    det = detect_epi_edges(np.full((9, 40), 0.4))
    assert not det.mask.any()
    assert fit_epi_lines(Epi(np.full((9, 40), 0.4), Orientation.HORIZONTAL, 4, 0)) == []


def test_detection_needs_three_rows():
    with pytest.raises(DegenerateInputError):
        detect_epi_edges(np.zeros((2, 10)))


def test_mask_follows_step_edge():
    data = step_epi(1.0, 30.3)
    det = detect_epi_edges(data)
    for a in range(9):
        cols = np.flatnonzero(det.mask[a])
        assert len(cols) >= 1
        assert np.all(np.abs(cols - (30.3 + (a - 4))) <= 1.0)


def test_two_parallel_edges_two_components():
    s = np.arange(64)[None, :] - (np.arange(9)[:, None] - 4) * 0.5
    data = np.where((s >= 25) & (s < 35), 0.8, 0.2)
    det = detect_epi_edges(data)
    for a in range(9):
        _, n = ndimage.label(det.mask[a])
        assert n == 2


@pytest.mark.parametrize("d,s0", [(1.0, 32.0), (2.0, 30.4), (-2.0, 33.7), (0.35, 31.1)])
def test_single_line_fit(d, s0):
    lines = fit_epi_lines(step_epi(d, s0), None, (-2.0, 2.0))
    ln = nearest(lines, s0)
    assert abs(ln.d - d) <= 0.05 and abs(ln.s0 - s0) <= 0.5
    assert ln.visibility.all()


def test_fit_matches_brute_force_oracle(rng):
    for _ in range(8):
        d, s0 = rng.uniform(-2, 2), rng.uniform(26, 38)
        data = step_epi(d, s0, lo=rng.uniform(0.1, 0.4), hi=rng.uniform(0.6, 0.9))
        d_ref, s_ref = brute_force_line(data, round(s0))
        ln = nearest(fit_epi_lines(data, None, (-2.0, 2.0)), s0)
        assert abs(ln.d - d_ref) <= 0.05 and abs(ln.s0 - s_ref) <= 0.5


@settings(max_examples=15, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(28.0, 36.0), st.sampled_from([-1, 1]))
def test_shear_equivariance(d, s0, k):
    rng_ = (-3.0, 3.0)
    a = nearest(fit_epi_lines(step_epi(d, s0), None, rng_), s0)
    b = nearest(fit_epi_lines(step_epi(d + k, s0), None, rng_), s0)
    assert abs((b.d - a.d) - k) <= 0.05


def test_visibility_clean_edge_all_true():
    data = step_epi(0.5, 31.2)
    assert line_visibility(data, (0.5, 31.2, 1)).all()


def test_visibility_flat_region_all_false():
    data = np.full((9, 64), 0.5)
    assert not line_visibility(data, (0.0, 20.0, 1)).any()


def test_visibility_wrong_polarity_false():
    data = step_epi(0.5, 31.2)
    assert not line_visibility(data, (0.5, 31.2, -1)).any()


def test_visibility_occlusion_interval():
    data, hidden = occluded_epi()
    vis = line_visibility(data, (0.0, 24.5, 1))
    assert hidden.any() and (~hidden).any()
    mismatch = np.flatnonzero(vis == hidden)
    # allowed only next to the analytic interval's boundary
    boundary = np.flatnonzero(np.diff(hidden.astype(int)) != 0)
    for a in mismatch:
        assert np.min(np.abs(np.concatenate([boundary, boundary + 1]) - a)) <= 1


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(20, 44), st.floats(0.01, 1.4), st.floats(0.01, 1.4))
def test_visibility_threshold_monotone(d, s0, t1, t2):
    data, _ = occluded_epi()
    lo, hi = sorted((t1, t2))
    v_lo = line_visibility(data, (d, s0, 1), tau_v=lo)
    v_hi = line_visibility(data, (d, s0, 1), tau_v=hi)
    assert np.all(v_hi | ~v_lo)


def test_offset_toward_bright_side():
    data = step_epi(0.0, 30.2)
    epi = Epi(data, Orientation.HORIZONTAL, 4, 7)
    line = nearest(fit_epi_lines(epi), 30.2)
    pos = epi_label_positions(epi, line, two_way=False)
    assert {s for _, s in pos} == {int(math.floor(line.s0 + 1.0))}
    labels = offset_and_weight(epi, [line], two_way=False)
    assert all(lb.pixel == (31, 7) for lb in labels)
    assert len(labels) == 9


def test_offset_two_way_labels_both_moving_sides():
    data = step_epi(0.0, 30.2)
    epi = Epi(data, Orientation.HORIZONTAL, 4, 7)
    line = nearest(fit_epi_lines(epi), 30.2)
    cols = {s for _, s in epi_label_positions(epi, line)}
    assert cols == {30, 31} or cols == {29, 31}


def test_labels_stay_in_bounds():
    data = step_epi(2.0, 1.0, S=20)
    epi = Epi(data, Orientation.VERTICAL, 4, 3)
    line = EpiLine(2.0, 1.0, np.ones(9, dtype=bool), 15.0, Orientation.VERTICAL, 3)
    for lb in offset_and_weight(epi, [line]):
        assert 0 <= lb.pixel[1] < 20 and lb.weight > 0


def test_edge_weights():
    w = edge_weights([1.0, 2.0, 4.0])
    assert w == [7.5, 15.0, 15.0]
    assert edge_weights([]) == []
    assert max(edge_weights(np.random.default_rng(0).uniform(size=20))) <= 15.0


def test_single_plane_center_labels():
    lf, _ = synth_lightfield(plane(d=1.0), 9, 9, 48, 48)
    lines = detect_crosshair_lines(lf)
    labels = center_view_labels(lines.values())
    assert len(labels) > 100
    assert all(lb.view == (4, 4) for lb in labels)
    err = np.array([abs(lb.d - 1.0) for lb in labels])
    assert np.mean(err <= 0.05) >= 0.99
    # away from the image border the filter support is complete
    interior = [e for lb, e in zip(labels, err) if 4 <= min(lb.pixel) and max(lb.pixel) <= 43]
    assert max(interior) <= 0.05


def test_occluded_at_center_line_gives_no_center_labels():
    data = step_epi(0.0, 30.2)
    epi = Epi(data, Orientation.HORIZONTAL, 4, 7)
    vis = np.ones(9, dtype=bool)
    vis[4] = False
    line = EpiLine(0.0, 30.2, vis, 15.0, Orientation.HORIZONTAL, 7)
    assert center_view_labels([(epi, [line])]) == []
    assert len(offset_and_weight(epi, [line])) > 0


def test_center_label_count_matches_recount(small):
    lf, _ = small
    lines = detect_crosshair_lines(lf)
    labels = center_view_labels(lines.values())
    recount = 0
    for epi, epi_lines in lines.values():
        for ln in epi_lines:
            if ln.visibility[epi.a_c] and ln.weight > 0:
                recount += sum(1 for a, _ in epi_label_positions(epi, ln) if a == epi.a_c)
    assert len(labels) == recount


@pytest.fixture(scope="module")
def two_layer_lines():
    lf, gt = synth_lightfield(two_layer(), 9, 9, 64, 64)
    return lf, gt, detect_crosshair_lines(lf)


def test_line_guides_agree_with_ground_truth(two_layer_lines):
    lf, gt, lines = two_layer_lines
    labels = [lb for epi, ls in lines.values() for lb in offset_and_weight(epi, ls)]
    err = np.array([abs(lb.d - gt[lb.view].disp[lb.pixel[1], lb.pixel[0]]) for lb in labels])
    assert len(labels) > 1000
    assert np.mean(err <= 0.1) >= 0.95


def test_visible_samples_cover_depth_edges(two_layer_lines):
    lf, gt, lines = two_layer_lines
    checked = 0
    for t in range(24, 40):
        epi, ls = lines[("horizontal", t)]
        for a in range(9):
            row = gt[epi.view_of(a)].disp[t]
            samples = np.array([ln.positions()[a] for ln in ls if ln.visibility[a]])
            for i in np.flatnonzero(np.diff(row) != 0):
                # skip junctions: a stationary texture edge crossing this row
                nb = [b for b in (a - 1, a + 1) if 0 <= b < 9]
                if any(abs(epi.data[b, i + 1] - epi.data[b, i]) > 0.01 for b in nb):
                    continue
                checked += 1
                assert np.min(np.abs(samples - (i + 0.5))) <= 1.0
    assert checked >= 100


def test_lines_sorted_and_deterministic(two_layer_lines):
    lf, _, lines = two_layer_lines
    epi, ls = lines[("vertical", 30)]
    assert [ln.s0 for ln in ls] == sorted(ln.s0 for ln in ls)
    again = fit_epi_lines(extract_epi(lf, "vertical", 30), None, lf.disparity_range)
    assert [(ln.d, ln.s0) for ln in again] == [(ln.d, ln.s0) for ln in ls]


def test_labels_csv():
    data = step_epi(0.0, 30.2)
    epi = Epi(data, Orientation.HORIZONTAL, 4, 7)
    csv = labels_to_csv(offset_and_weight(epi, fit_epi_lines(epi)))
    lines = csv.strip().split("\n")
    assert lines[0] == "view_u,view_v,x,y,d,weight,source"
    assert len(lines) > 1 and lines[1].endswith("line_guide")
