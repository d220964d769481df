"""Depth sharpening, forward warping and non-cross-hair view synthesis.

Warping follows the shared convention: a pixel ``(x, y)`` of view
``(u, v)`` with disparity ``d`` lands at ``x + d * (v' - v)``,
``y + d * (u' - u)`` in view ``(u', v')``. Splats go to the nearest pixel
and collisions keep the larger disparity (the nearer surface).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DepthMap, Orientation
from .diffusion import CENTER_WEIGHT, SMOOTHNESS_C, SMOOTHNESS_EPS, SOLVER_TOL, diffuse

WMF_RADIUS = 7
WMF_EPS = 1e-6
MISMATCH_LIMIT = 0.5


@dataclass(frozen=True, eq=False)
class WarpResult:
    """Forward-warped depth; ``hit_count[p]`` counts source pixels landing on ``p``."""

    depth: DepthMap
    hit_count: np.ndarray

    @property
    def holes(self) -> np.ndarray:
        return self.hit_count == 0


def _guide_array(guide: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    g = np.asarray(guide, dtype=np.float64)
    if g.ndim == 2:
        g = g[..., None]
    if g.shape[:2] != shape:
        raise ValueError(f"guide shape {g.shape[:2]} does not match depth {shape}")
    return g


def sharpen_depth(
    depth: DepthMap,
    guide: np.ndarray,
    r: int = WMF_RADIUS,
    eps: float = WMF_EPS,
    chunk_rows: int = 16,
) -> DepthMap:
    """Guide-weighted median filter over a ``(2r+1)^2`` window.

    Weights are ``1 / (||I(p) - I(q)||^2 + eps)``; window taps outside the
    image are ignored. Among equal cumulative weight the smaller value wins,
    so the result is deterministic.
    """
    if not depth.complete:
        raise ValueError("sharpening needs a complete depth map")
    D = depth.disp
    H, W = D.shape
    G = _guide_array(guide, (H, W))
    k = 2 * r + 1
    Dp = np.pad(D, r, mode="constant", constant_values=0.0)
    Gp = np.pad(G, ((r, r), (r, r), (0, 0)), mode="constant", constant_values=0.0)
    Mp = np.pad(np.ones((H, W)), r, mode="constant", constant_values=0.0)
    dwin = sliding_window_view(Dp, (k, k))
    gwin = sliding_window_view(Gp, (k, k), axis=(0, 1))
    mwin = sliding_window_view(Mp, (k, k))
    out = np.empty((H, W))
    for y0 in range(0, H, chunk_rows):
        y1 = min(H, y0 + chunk_rows)
        vals = dwin[y0:y1].reshape(y1 - y0, W, k * k)
        gw = gwin[y0:y1]  # (rows, W, C, k, k)
        diff = gw - G[y0:y1, :, :, None, None]
        dist = (diff**2).sum(axis=2).reshape(y1 - y0, W, k * k)
        w = mwin[y0:y1].reshape(y1 - y0, W, k * k) / (dist + eps)
        order = np.argsort(vals, axis=-1, kind="stable")
        sv = np.take_along_axis(vals, order, axis=-1)
        cw = np.cumsum(np.take_along_axis(w, order, axis=-1), axis=-1)
        half = 0.5 * cw[..., -1:]
        idx = np.argmax(cw >= half, axis=-1)
        out[y0:y1] = np.take_along_axis(sv, idx[..., None], axis=-1)[..., 0]
    return DepthMap(out)


def warp_depth(
    src: DepthMap, src_view: tuple[int, int], dst_view: tuple[int, int]
) -> WarpResult:
    """Forward-splat ``src`` from ``src_view`` into ``dst_view``.

    Exact disparity ties are resolved in favour of the first source pixel in
    row-major order.
    """
    H, W = src.shape
    du = dst_view[0] - src_view[0]
    dv = dst_view[1] - src_view[1]
    ys, xs = np.nonzero(src.valid)
    d = src.disp[ys, xs]
    xt = np.floor(xs + d * dv + 0.5).astype(np.int64)
    yt = np.floor(ys + d * du + 0.5).astype(np.int64)
    keep = (xt >= 0) & (xt < W) & (yt >= 0) & (yt < H)
    xt, yt, d = xt[keep], yt[keep], d[keep]
    src_idx = (ys * W + xs)[keep]
    tgt = yt * W + xt
    hits = np.bincount(tgt, minlength=H * W).reshape(H, W)
    out = np.full(H * W, np.nan)
    if len(tgt):
        # sort by target, then nearest first, then scan order
        order = np.lexsort((src_idx, -d, tgt))
        t_sorted = tgt[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = t_sorted[1:] != t_sorted[:-1]
        out[t_sorted[first]] = d[order][first]
    return WarpResult(DepthMap(out.reshape(H, W)), hits)


def crosshair_warps(
    center: DepthMap, angular_shape: tuple[int, int]
) -> dict[tuple[int, int], WarpResult]:
    """Warps of the centre map into every cross-hair view (centre included)."""
    U, V = angular_shape
    c = ((U - 1) // 2, (V - 1) // 2)
    views = [(c[0], v) for v in range(V)] + [(u, c[1]) for u in range(U) if u != c[0]]
    return {view: warp_depth(center, c, view) for view in views}


def assemble_depth_epi(
    center: DepthMap,
    orientation: Orientation | str,
    fixed_spatial: int,
    angular_shape: tuple[int, int],
    warps: dict[tuple[int, int], WarpResult] | None = None,
) -> np.ndarray:
    """Depth EPI with holes (NaN) built from warps of the centre map.

    Row ``a_c`` is the centre map itself; row ``a`` is the warp into the
    ``a``-th view of the central row (horizontal) or column (vertical),
    sliced along this EPI's spatial line.
    """
    orientation = Orientation(orientation)
    U, V = angular_shape
    u_c, v_c = (U - 1) // 2, (V - 1) // 2
    if warps is None:
        warps = crosshair_warps(center, angular_shape)
    if orientation is Orientation.HORIZONTAL:
        rows = []
        for v in range(V):
            dm = center if v == v_c else warps[(u_c, v)].depth
            rows.append(dm.disp[fixed_spatial, :])
    else:
        rows = []
        for u in range(U):
            dm = center if u == u_c else warps[(u, v_c)].depth
            rows.append(dm.disp[:, fixed_spatial])
    return np.array(rows)


def fill_holes(
    depth: DepthMap,
    intensity: np.ndarray,
    data_weight: float = CENTER_WEIGHT,
    c: float = SMOOTHNESS_C,
    eps: float = SMOOTHNESS_EPS,
    tol: float = SOLVER_TOL,
    max_iter: int | None = None,
) -> DepthMap:
    """Spatial diffusion with ``data_weight`` on valid pixels and 0 on holes."""
    if depth.complete:
        return depth
    if not depth.valid.any():
        raise ValueError("cannot fill a depth map with no valid pixels")
    wd = np.where(depth.valid, data_weight, 0.0)
    out = diffuse(intensity, wd, depth.disp, c, eps, tol, max_iter)
    return DepthMap(out)


def merge_warps(a: DepthMap, b: DepthMap, mismatch: float = MISMATCH_LIMIT) -> DepthMap:
    """Mean of two warped maps; the larger where they disagree by more than ``mismatch``."""
    da, db = a.disp, b.disp
    both = a.valid & b.valid
    out = np.where(a.valid, da, db)
    with np.errstate(invalid="ignore"):
        far = both & (np.abs(da - db) > mismatch)
    out = np.where(both, 0.5 * (da + db), out)
    out = np.where(far, np.fmax(da, db), out)
    return DepthMap(out, a.valid | b.valid)


def synthesize_noncrosshair(
    row_depth: DepthMap,
    col_depth: DepthMap,
    target: tuple[int, int],
    intensity: np.ndarray,
    angular_shape: tuple[int, int],
    fill_weight: float = CENTER_WEIGHT,
    c: float = SMOOTHNESS_C,
    eps: float = SMOOTHNESS_EPS,
    tol: float = SOLVER_TOL,
    max_iter: int | None = None,
) -> DepthMap:
    """Depth of an off-cross-hair view from its two nearest cross-hair views.

    ``row_depth`` belongs to ``(u_c, v_t)`` and ``col_depth`` to
    ``(u_t, v_c)``. Both are warped to ``target`` and merged; pixels neither
    warp reaches are diffused in from their surroundings using the target
    view's ``intensity``.
    """
    U, V = angular_shape
    u_c, v_c = (U - 1) // 2, (V - 1) // 2
    u_t, v_t = target
    wa = warp_depth(row_depth, (u_c, v_t), target)
    wb = warp_depth(col_depth, (u_t, v_c), target)
    merged = merge_warps(wa.depth, wb.depth)
    return fill_holes(merged, intensity, fill_weight, c, eps, tol, max_iter)
