"""EPI edge detection, parametric line fitting, visibility and sparse labels.

An EPI line is ``s(a) = s0 + d * (a - a_c)``: ``d`` is the disparity (slope)
and ``s0`` the spatial position in the centre row. Lines are detected with
full-height oriented step filters, fitted by a slope sweep with parabolic
refinement, and their per-view visibility is decided by how well the local
EPI gradient aligns with the line normal.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .core import DegenerateInputError, Epi, Orientation, epi_gradient

TAU_V = math.pi / 13
G_MIN = 1e-3
EDGE_THRESHOLD = 0.1
SLOPE_STEP = 0.05
FILTER_WIDTH = 9
MAX_LINE_WEIGHT = 15.0
GRADIENT_SIGMA = 0.7
REFINE_STEPS = 4

# spatial step profile of the oriented filters; unit response to a unit step
_HALF = FILTER_WIDTH // 2
_STEP_KERNEL = np.concatenate([-np.ones(_HALF), [0.0], np.ones(_HALF)]) / _HALF


class LabelSource(str, enum.Enum):
    REPROJECTED = "reprojected"
    LINE_GUIDE = "line_guide"


@dataclass(frozen=True, eq=False)
class EpiLine:
    d: float
    s0: float
    visibility: np.ndarray
    weight: float
    orientation: Orientation
    fixed_spatial: int
    response: float = 0.0
    polarity: int = 1

    @property
    def A(self) -> int:
        return len(self.visibility)

    def positions(self) -> np.ndarray:
        a = np.arange(self.A)
        return self.s0 + self.d * (a - (self.A - 1) // 2)


@dataclass(frozen=True)
class SparseLabel:
    view: tuple[int, int]
    pixel: tuple[int, int]  # (x, y)
    d: float
    weight: float
    source: LabelSource = LabelSource.LINE_GUIDE


@dataclass(frozen=True, eq=False)
class EdgeDetection:
    """Oriented filter responses of one EPI.

    ``cube[k, a, s]`` is the signed mean step response along the line of
    slope ``slopes[k]`` through ``(a, s)``.
    """

    response: np.ndarray
    mask: np.ndarray
    best_slope: np.ndarray
    slopes: np.ndarray
    cube: np.ndarray
    prewitt: np.ndarray


def _gradient(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return epi_gradient(data, sigma=GRADIENT_SIGMA)


def slope_set(disparity_range: tuple[float, float], step: float = SLOPE_STEP) -> np.ndarray:
    lo, hi = disparity_range
    if not hi > lo or step <= 0:
        raise DegenerateInputError(f"empty disparity range {disparity_range}")
    n = int(math.floor((hi - lo) / step + 1e-9))
    slopes = lo + step * np.arange(n + 1)
    if hi - slopes[-1] > 1e-9:
        slopes = np.append(slopes, hi)
    return slopes


def _epi_array(epi: Epi | np.ndarray) -> np.ndarray:
    data = epi.data if isinstance(epi, Epi) else np.asarray(epi, dtype=np.float64)
    if data.ndim == 3:
        data = data.mean(axis=-1)
    return data


def _prewitt(data: np.ndarray) -> np.ndarray:
    return ndimage.correlate1d(data, _STEP_KERNEL, axis=1, mode="nearest")


def _interp_rows(P: np.ndarray, rows: np.ndarray, pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of ``P[rows, pos]``; returns values and in-bounds mask."""
    S = P.shape[1]
    inside = (pos >= 0.0) & (pos <= S - 1)
    p = np.clip(pos, 0.0, S - 1)
    i0 = np.minimum(np.floor(p).astype(np.int64), S - 2)
    f = p - i0
    vals = P[rows, i0] * (1.0 - f) + P[rows, i0 + 1] * f
    return vals, inside


def _quad_rows(P: np.ndarray, rows: np.ndarray, pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Local quadratic through the three samples nearest ``pos``.

    On step-filter responses the vertex of that parabola sits on the
    sub-pixel edge, so summing it along a line does not favour slopes that
    pass through pixel centres.
    """
    S = P.shape[1]
    inside = (pos >= 0.0) & (pos <= S - 1)
    p = np.clip(pos, 0.0, S - 1)
    i = np.clip(np.floor(p + 0.5).astype(np.int64), 1, S - 2)
    t = p - i
    pm, p0, pp = P[rows, i - 1], P[rows, i], P[rows, i + 1]
    vals = p0 + 0.5 * t * (pp - pm) + 0.5 * t * t * (pp - 2.0 * p0 + pm)
    return vals, inside


def _min_rows(A: int) -> int:
    return A // 2 + 1


def line_response(
    P: np.ndarray,
    slopes: np.ndarray,
    anchor_row: float,
    anchors: np.ndarray,
    use_rows: np.ndarray | None = None,
) -> np.ndarray:
    """Signed mean of ``P`` along lines through ``(anchor_row, anchors[j])``.

    Returns shape ``(len(slopes), len(anchors))``. Lines with fewer than
    ``A // 2 + 1`` samples at least half a filter width inside the image
    score zero. ``use_rows`` (boolean, length ``A``) restricts the mean to
    a subset of rows, of which three suffice.
    """
    A = P.shape[0]
    slopes = np.atleast_1d(np.asarray(slopes, dtype=np.float64))
    anchors = np.atleast_1d(np.asarray(anchors, dtype=np.float64))
    rows = np.arange(A)
    pos = anchors[None, None, :] + slopes[:, None, None] * (rows[None, :, None] - anchor_row)
    vals, inside = _quad_rows(P, rows[None, :, None], pos)
    # the step filter is biased where its support leaves the image
    S = P.shape[1]
    inside &= (pos >= _HALF) & (pos <= S - 1 - _HALF)
    # most rows must lie inside the image even when only a subset is used
    ok = inside.sum(axis=1) >= _min_rows(A)
    need = _min_rows(A)
    if use_rows is not None:
        inside = inside & np.asarray(use_rows, dtype=bool)[None, :, None]
        need = 3
    count = inside.sum(axis=1)
    total = np.where(inside, vals, 0.0).sum(axis=1)
    out = np.where(ok & (count >= need), total / np.maximum(count, 1), 0.0)
    return out


def _response_cube(P: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    A, S = P.shape
    s = np.arange(S)
    total = np.zeros((len(slopes), A, S))
    count = np.zeros((len(slopes), A, S))
    for a in range(A):
        for a2 in range(A):
            pos = s[None, :] + (slopes * (a2 - a))[:, None]
            vals, inside = _interp_rows(P, np.full(pos.shape, a2), pos)
            total[:, a, :] += np.where(inside, vals, 0.0)
            count[:, a, :] += inside
    return np.where(count >= _min_rows(A), total / np.maximum(count, 1), 0.0)


def detect_epi_edges(
    epi: Epi | np.ndarray,
    disparity_range: tuple[float, float] = (-2.0, 2.0),
    threshold: float = EDGE_THRESHOLD,
    slope_step: float = SLOPE_STEP,
) -> EdgeDetection:
    """Oriented step-filter bank over the full EPI height.

    ``response`` is the best absolute response over slopes; ``mask`` keeps
    spatial local maxima (3-px window) above ``threshold`` times the EPI's
    maximum response.
    """
    data = _epi_array(epi)
    if data.shape[0] < 3:
        raise DegenerateInputError(f"edge detection needs at least 3 EPI rows, got {data.shape[0]}")
    slopes = slope_set(disparity_range, slope_step)
    P = _prewitt(data)
    cube = _response_cube(P, slopes)
    mag = np.abs(cube)
    k_best = mag.argmax(axis=0)
    response = np.take_along_axis(mag, k_best[None], axis=0)[0]
    best_slope = slopes[k_best]

    peak = response.max()
    mask = np.zeros(response.shape, dtype=bool)
    if peak > G_MIN:
        left = np.pad(response, ((0, 0), (1, 0)), constant_values=-np.inf)[:, :-1]
        right = np.pad(response, ((0, 0), (0, 1)), constant_values=-np.inf)[:, 1:]
        mask = (response > left) & (response >= right) & (response >= threshold * peak)
    return EdgeDetection(response, mask, best_slope, slopes, cube, P)


def _parabolic_offset(y_minus: float, y0: float, y_plus: float) -> float:
    denom = y_minus - 2.0 * y0 + y_plus
    if denom >= 0.0:
        return 0.0
    return float(np.clip(0.5 * (y_minus - y_plus) / denom, -0.5, 0.5))


def _refine(
    P: np.ndarray,
    disparity_range: tuple[float, float],
    step: float,
    anchor_row: int,
    s_int: int,
    d_coarse: float,
    use_rows: np.ndarray | None = None,
) -> tuple[float, float, float]:
    """Sub-step slope and sub-pixel position around a coarse hit at ``anchor_row``.

    Returns ``(d, s_at_anchor_row, signed_response)``.
    """
    lo, hi = disparity_range

    def slope_refine(s_pos: float, d_c: float) -> float:
        trial = np.array([d_c - step, d_c, d_c + step])
        r = np.abs(line_response(P, trial, anchor_row, [s_pos], use_rows)[:, 0])
        return float(np.clip(d_c + step * _parabolic_offset(*r), lo, hi))

    def pos_refine(d_c: float) -> float:
        r = np.abs(line_response(P, [d_c], anchor_row, [s_int - 1.0, s_int, s_int + 1.0], use_rows)[0])
        return s_int + _parabolic_offset(*r)

    # climb while the parabola vertex lies on the edge of the trial bracket,
    # but never more than REFINE_STEPS steps away from the coarse slope
    d = d_coarse
    s = float(s_int)
    for _ in range(REFINE_STEPS):
        d_new = float(np.clip(slope_refine(s, d), d_coarse - REFINE_STEPS * step, d_coarse + REFINE_STEPS * step))
        s = pos_refine(d_new)
        moved = abs(d_new - d)
        d = d_new
        if moved < 0.5 * step - 1e-12:
            break
    d = slope_refine(s, d)
    resp = float(line_response(P, [d], anchor_row, [s], use_rows)[0, 0])
    return d, s, resp


def _coarse_slope(det: EdgeDetection, a: int, s: int, disparity_range: tuple[float, float]) -> float:
    lo, hi = disparity_range
    prof = np.abs(det.cube[:, a, s])
    d = float(det.slopes[int(prof.argmax())])
    return min(max(d, lo), hi)


SIDE_TOLERANCE = 0.1


def _kernels(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Discrete Gaussian and derivative taps matching ``ndimage.gaussian_filter``."""
    r = int(4.0 * sigma + 0.5)
    impulse = np.zeros(2 * r + 1)
    impulse[r] = 1.0
    g = ndimage.gaussian_filter1d(impulse, sigma, mode="constant")[::-1]
    dg = ndimage.gaussian_filter1d(impulse, sigma, order=1, mode="constant")[::-1]
    return g, dg


def _border_gradient(
    data: np.ndarray, d: float, rows: np.ndarray, pos: np.ndarray, sigma: float = GRADIENT_SIGMA
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian gradient at ``(rows, pos)`` near the first/last view.

    Rows beyond the EPI are continued along slope ``d`` (the boundary row
    shifted by ``d`` per view), which is exact for an edge of that slope.
    """
    A, S = data.shape
    g, dg = _kernels(sigma)
    r = len(g) // 2
    offs = np.arange(-r, r + 1)
    cols_all = np.arange(S)
    gs_out = np.empty(len(rows))
    ga_out = np.empty(len(rows))
    for n, (a, p) in enumerate(zip(rows, pos)):
        p = float(np.clip(p, 0.0, S - 1))
        c0 = min(int(np.floor(p)), S - 2)
        f = p - c0
        vals = []
        for c in (c0, c0 + 1):
            win = np.empty((len(offs), len(offs)))
            for i, da in enumerate(offs):
                aa = a + da
                cols = c + offs
                if aa < 0:
                    row, shift = data[0], -d * aa
                elif aa >= A:
                    row, shift = data[A - 1], -d * (aa - (A - 1))
                else:
                    row, shift = data[aa], 0.0
                win[i] = np.interp(np.clip(cols + shift, 0, S - 1), cols_all, row)
            # correlate: angular taps on axis 0, spatial on axis 1
            vals.append((g @ win @ dg, dg @ win @ g))
        gs_out[n] = vals[0][0] * (1 - f) + vals[1][0] * f
        ga_out[n] = vals[0][1] * (1 - f) + vals[1][1] * f
    return gs_out, ga_out


def line_visibility(
    epi: Epi | np.ndarray,
    line: EpiLine | tuple[float, float, int],
    tau_v: float = TAU_V,
    g_min: float = G_MIN,
    gradient: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Per-view visibility of a line from gradient/normal alignment.

    A sample is visible when the cosine between the EPI gradient at
    ``(a, s(a))`` and the line normal ``(-d, 1) * polarity`` (in ``(a, s)``
    components) exceeds ``cos(tau_v)``. Out-of-image samples and samples
    with gradient magnitude below ``g_min`` are not visible.

    ``line`` may be an :class:`EpiLine` or a ``(d, s0, polarity)`` triple.
    """
    data = _epi_array(epi)
    gx, gy = gradient if gradient is not None else _gradient(data)
    if isinstance(line, EpiLine):
        d, s0, polarity = line.d, line.s0, line.polarity
    else:
        d, s0, polarity = line
    A, S = data.shape
    a = np.arange(A)
    pos = s0 + d * (a - (A - 1) // 2)
    gs, inside = _interp_rows(gx, a, pos)
    ga, _ = _interp_rows(gy, a, pos)
    r = int(4.0 * GRADIENT_SIGMA + 0.5)
    edge_rows = np.flatnonzero(((a < r) | (a >= A - r)) & inside)
    if len(edge_rows) and A > 2 * r:
        gs[edge_rows], ga[edge_rows] = _border_gradient(data, d, edge_rows, pos[edge_rows])
    norm_g = np.hypot(gs, ga)
    normal = np.array([-d, 1.0]) * (1.0 if polarity >= 0 else -1.0) / math.hypot(d, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = (ga * normal[0] + gs * normal[1]) / norm_g
    return inside & (norm_g >= g_min) & (cos > math.cos(tau_v))


def fit_epi_lines(
    epi: Epi,
    detection: EdgeDetection | None = None,
    disparity_range: tuple[float, float] = (-2.0, 2.0),
    slope_step: float = SLOPE_STEP,
    tau_v: float = TAU_V,
    g_min: float = G_MIN,
    threshold: float = EDGE_THRESHOLD,
    min_visible: int = 3,
) -> list[EpiLine]:
    """Fit parametric lines to the detected edges of ``epi``.

    Every centre-row edge pixel seeds a line. Edge pixels in other rows
    that no visible part of an existing line explains (within 1 px) seed
    lines that may be hidden in the centre view; those are kept only if
    visible at their seed row and in at least ``min_visible`` views.
    """
    lo, hi = disparity_range
    if not hi > lo:
        raise DegenerateInputError(f"empty disparity range {disparity_range}")
    data = _epi_array(epi)
    if detection is None:
        detection = detect_epi_edges(data, disparity_range, threshold, slope_step)
    mask = detection.mask
    if not mask.any():
        return []
    A, S = data.shape
    a_c = (A - 1) // 2
    P = detection.prewitt
    grad = _gradient(data)
    orientation = epi.orientation if isinstance(epi, Epi) else Orientation.HORIZONTAL
    fixed_spatial = epi.fixed_spatial if isinstance(epi, Epi) else 0

    raw: list[tuple[float, float, float, np.ndarray]] = []
    explained = np.zeros_like(mask)
    cols = np.arange(S)

    def explain(d: float, s0: float, vis: np.ndarray) -> None:
        pos = s0 + d * (np.arange(A) - a_c)
        for a in np.flatnonzero(vis):
            explained[a] |= mask[a] & (np.abs(cols - pos[a]) <= 1.0)

    def fit(a: int, s: int, d_c: float, use_rows=None):
        d, s_a, resp = _refine(P, disparity_range, slope_step, a, s, d_c, use_rows)
        s0 = s_a - d * (a - a_c)
        vis = line_visibility(data, (d, s0, 1 if resp >= 0 else -1), tau_v, g_min, grad)
        return d, s0, resp, vis

    def make(a: int, s: int):
        first = fit(a, s, _coarse_slope(detection, a, s, disparity_range))
        vis = first[3]
        if vis.all() or vis.sum() < 3:
            return first
        # occluded rows carry other edges; refit on the rows this line explains
        second = fit(a, s, first[0], vis)
        return second if second[3].sum() >= vis.sum() else first

    for s in np.flatnonzero(mask[a_c]):
        d, s0, resp, vis = make(a_c, int(s))
        explained[a_c, s] = True
        if vis.sum() < min_visible:
            continue
        raw.append((d, s0, resp, vis))
        explain(d, s0, vis)

    cand = [(a, s) for a, s in zip(*np.nonzero(mask)) if a != a_c]
    cand.sort(key=lambda p: (-detection.response[p], p[0], p[1]))
    for a, s in cand:
        if explained[a, s]:
            continue
        d, s0, resp, vis = make(int(a), int(s))
        explained[a, s] = True
        if not vis[a] or vis.sum() < min_visible:
            continue
        if any(abs(d - q[0]) < 2 * slope_step and abs(s0 - q[1]) < 0.5 for q in raw):
            continue
        raw.append((d, s0, resp, vis))
        explain(d, s0, vis)

    weights = edge_weights([abs(r[2]) for r in raw])
    lines = [
        EpiLine(
            d=d, s0=s0, visibility=vis, weight=w, orientation=orientation,
            fixed_spatial=fixed_spatial, response=abs(resp), polarity=1 if resp >= 0 else -1,
        )
        for (d, s0, resp, vis), w in zip(raw, weights)
    ]
    lines.sort(key=lambda ln: (ln.s0, ln.d))
    return lines


def edge_weights(responses: Sequence[float], scale: float = MAX_LINE_WEIGHT) -> list[float]:
    """Edge-importance weight: ``clip(response / median, 0, 1) * scale``."""
    if len(responses) == 0:
        return []
    r = np.asarray(responses, dtype=np.float64)
    med = float(np.median(r))
    if med <= 0:
        return [scale if x > 0 else 0.0 for x in r]
    return list(np.clip(r / med, 0.0, 1.0) * scale)


def _offset_pixel(s: float, sign: float) -> int:
    # one pixel into the surface, rounding toward the edge
    return int(math.floor(s + 1.0)) if sign > 0 else int(math.ceil(s - 1.0))


def side_moves_with_line(
    data: np.ndarray, line: EpiLine, side: int, probe: float = 2.0, tolerance: float = SIDE_TOLERANCE
) -> bool:
    """Whether the intensity just beside ``line`` follows the line's slope.

    Samples ``probe`` px to one side of the line in every view. A surface
    bounded by the edge moves with it, so those samples stay nearly
    constant; an occluded surface slides past at its own slope. The spread
    is judged relative to the edge's own contrast.
    """
    A, S = data.shape
    if line.visibility.sum() < 2:
        return False
    rows = np.arange(A)
    pos = line.positions() + side * probe
    vals, inside = _interp_rows(data, rows, pos)
    vals = vals[inside]
    if len(vals) < _min_rows(A):
        return False
    spread = float(vals.max() - vals.min())
    return spread <= tolerance * line.response + 5 * G_MIN


def epi_label_positions(
    epi: Epi | np.ndarray, line: EpiLine, gradient=None, two_way: bool = True
) -> list[tuple[int, int]]:
    """``(a, s)`` EPI cells that the visible samples of ``line`` label.

    Each visible sample is offset one pixel onto every side whose surface
    moves with the line. If neither side qualifies (or ``two_way`` is off)
    the sample goes toward the brighter side, i.e. along the sign of the
    spatial gradient.
    """
    data = _epi_array(epi)
    A, S = data.shape
    gx, _ = gradient if gradient is not None else _gradient(data)
    pos = line.positions()
    sides = []
    if two_way:
        sides = [sd for sd in (-1, 1) if side_moves_with_line(data, line, sd)]
    out = []
    for a in np.flatnonzero(line.visibility):
        if sides:
            signs = sides
        else:
            gs, _ = _interp_rows(gx, np.array([a]), np.array([pos[a]]))
            signs = [float(np.sign(gs[0])) or float(line.polarity)]
        for sign in signs:
            s = _offset_pixel(float(pos[a]), sign)
            if 0 <= s < S:
                out.append((int(a), s))
    return out


def offset_and_weight(epi: Epi, lines: Iterable[EpiLine], two_way: bool = True) -> list[SparseLabel]:
    """Line-guide labels from every visible sample, offset onto the surface.

    Placement follows :func:`epi_label_positions`; labels falling outside
    the EPI are dropped.
    """
    grad = _gradient(_epi_array(epi))
    labels = []
    for line in lines:
        if line.weight <= 0:
            continue
        for a, s in epi_label_positions(epi, line, grad, two_way):
            labels.append(
                SparseLabel(epi.view_of(a), epi.pixel_of(s), line.d, line.weight, LabelSource.LINE_GUIDE)
            )
    return labels


def center_view_labels(
    epis_and_lines: Iterable[tuple[Epi, Sequence[EpiLine]]],
    two_way: bool = True,
) -> list[SparseLabel]:
    """Labels in the central view from lines visible at the centre row."""
    labels = []
    for epi, lines in epis_and_lines:
        a_c = epi.a_c
        grad = _gradient(_epi_array(epi))
        for line in lines:
            if line.weight <= 0 or not line.visibility[a_c]:
                continue
            for a, s in epi_label_positions(epi, line, grad, two_way):
                if a == a_c:
                    labels.append(
                        SparseLabel(epi.view_of(a), epi.pixel_of(s), line.d, line.weight, LabelSource.LINE_GUIDE)
                    )
    return labels


def labels_to_csv(labels: Iterable[SparseLabel]) -> str:
    rows = ["view_u,view_v,x,y,d,weight,source"]
    for lb in labels:
        rows.append(
            f"{lb.view[0]},{lb.view[1]},{lb.pixel[0]},{lb.pixel[1]},{lb.d:.6f},{lb.weight:.6f},{lb.source.value}"
        )
    return "\n".join(rows) + "\n"
