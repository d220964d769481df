"""End-to-end estimation: EPI lines, central diffusion, angular inpainting.

Stages run in order with a barrier between them:

1. fit lines on every cross-hair EPI,
2. diffuse their central-view labels into a dense centre map,
3. sharpen it and warp it along the cross-hair,
4. complete each depth EPI by diffusion (horizontal and vertical),
5. synthesise the remaining views from their cross-hair neighbours.

Work inside a stage is spread over a thread pool; results are gathered in
submission order so the output does not depend on the thread count.
"""

from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable

import numpy as np

from .core import DepthMap, LightField, LightFieldError, Orientation, crosshair_views, extract_epi
from .diffusion import (
    CENTER_WEIGHT,
    SMOOTHNESS_C,
    SMOOTHNESS_EPS,
    SOLVER_TOL,
    diffuse_epi,
    diffuse_grid,
)
from .edges import (
    EDGE_THRESHOLD,
    G_MIN,
    SLOPE_STEP,
    TAU_V,
    SparseLabel,
    center_view_labels,
    fit_epi_lines,
    offset_and_weight,
)
from .reproject import (
    WMF_EPS,
    WMF_RADIUS,
    assemble_depth_epi,
    crosshair_warps,
    sharpen_depth,
    synthesize_noncrosshair,
)

Progress = Callable[[str, float], None]


class PipelineError(LightFieldError, RuntimeError):
    pass


class ViewsMode(str, enum.Enum):
    CENTER = "center"
    CROSSHAIR = "crosshair"
    ALL = "all"


@dataclass(frozen=True)
class PipelineConfig:
    tau_v: float = TAU_V
    c: float = SMOOTHNESS_C
    eps_s: float = SMOOTHNESS_EPS
    lambda_c: float = CENTER_WEIGHT
    r: int = WMF_RADIUS
    eps_wmf: float = WMF_EPS
    tau_e: float = EDGE_THRESHOLD
    slope_step: float = SLOPE_STEP
    tol: float = SOLVER_TOL
    max_iter: int | None = None
    views_mode: ViewsMode = ViewsMode.ALL
    g_min: float = G_MIN
    two_way: bool = True
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "views_mode", ViewsMode(self.views_mode))
        positive = ("tau_v", "c", "eps_s", "lambda_c", "r", "eps_wmf", "tau_e", "slope_step", "tol", "g_min")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.tau_v < math.pi / 2:
            raise ValueError("tau_v must be below pi/2")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["views_mode"] = self.views_mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "PipelineConfig":
        return PipelineConfig(**{**asdict(self), **changes})


@dataclass
class PipelineResult:
    maps: dict[tuple[int, int], DepthMap]
    center_raw: DepthMap | None = None
    center_sharp: DepthMap | None = None
    timings: dict[str, float] = field(default_factory=dict)
    label_counts: dict[str, int] = field(default_factory=dict)


EpiKey = tuple[str, int]


def _pmap(fn, items: Iterable, threads: int) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _report(progress: Progress | None, stage: str, frac: float) -> None:
    if progress is not None:
        progress(stage, float(frac))


def detect_crosshair_lines(
    lf: LightField, cfg: PipelineConfig = PipelineConfig()
) -> dict[EpiKey, tuple]:
    """Fitted lines for every horizontal (row ``t``) and vertical (column ``s``) EPI.

    Keys are ``("horizontal", t)`` / ``("vertical", s)``; values are
    ``(Epi, list[EpiLine])``.
    """
    keys = [(Orientation.HORIZONTAL.value, t) for t in range(lf.H)]
    keys += [(Orientation.VERTICAL.value, s) for s in range(lf.W)]

    def work(key):
        epi = extract_epi(lf, key[0], key[1])
        lines = fit_epi_lines(
            epi,
            None,
            lf.disparity_range,
            slope_step=cfg.slope_step,
            tau_v=cfg.tau_v,
            g_min=cfg.g_min,
            threshold=cfg.tau_e,
        )
        return epi, lines

    return dict(zip(keys, _pmap(work, keys, cfg.threads)))


def _center_from_lines(lf: LightField, lines: dict, cfg: PipelineConfig) -> tuple[DepthMap, int]:
    labels = center_view_labels(lines.values(), two_way=cfg.two_way)
    if not labels:
        raise PipelineError("no depth edges detected")
    dm = diffuse_grid(lf.gray[lf.u_c, lf.v_c], labels, None, cfg.c, cfg.eps_s, cfg.tol, cfg.max_iter)
    return dm, len(labels)


def estimate_center(
    lf: LightField, cfg: PipelineConfig = PipelineConfig(), progress: Progress | None = None
) -> DepthMap:
    """Unsharpened central-view disparity."""
    return run(lf, cfg.replace(views_mode=ViewsMode.CENTER), progress).center_raw


def estimate_crosshair(
    lf: LightField, cfg: PipelineConfig = PipelineConfig(), progress: Progress | None = None
) -> dict[tuple[int, int], DepthMap]:
    """Disparity for all ``U + V - 1`` cross-hair views."""
    return run(lf, cfg.replace(views_mode=ViewsMode.CROSSHAIR), progress).maps


def estimate_all(
    lf: LightField, cfg: PipelineConfig = PipelineConfig(), progress: Progress | None = None
) -> dict[tuple[int, int], DepthMap]:
    """Disparity for every view of the light field."""
    return run(lf, cfg.replace(views_mode=ViewsMode.ALL), progress).maps


def _inpaint_crosshair(
    lf: LightField, lines: dict, sharp: DepthMap, cfg: PipelineConfig, progress: Progress | None
) -> tuple[dict[tuple[int, int], DepthMap], int]:
    U, V, H, W = lf.U, lf.V, lf.H, lf.W
    u_c, v_c = lf.center
    warps = crosshair_warps(sharp, lf.angular_shape)
    keys = list(lines)

    def work(key):
        epi, epi_lines = lines[key]
        D_o = assemble_depth_epi(sharp, epi.orientation, epi.fixed_spatial, lf.angular_shape, warps)
        # the centre row is fully constrained by the sharpened map already
        guides = [g for g in offset_and_weight(epi, epi_lines, cfg.two_way) if g.view != (u_c, v_c)]
        out = diffuse_epi(
            D_o, epi, guides, None, cfg.lambda_c, cfg.c, cfg.eps_s, cfg.tol, cfg.max_iter
        )
        return out, len(guides)

    results = _pmap(work, keys, cfg.threads)
    _report(progress, "crosshair", 1.0)
    horiz = np.empty((V, H, W))
    vert = np.empty((U, H, W))
    n_guides = 0
    for key, (out, n) in zip(keys, results):
        n_guides += n
        if key[0] == Orientation.HORIZONTAL.value:
            horiz[:, key[1], :] = out
        else:
            vert[:, :, key[1]] = out
    maps: dict[tuple[int, int], DepthMap] = {}
    for view in crosshair_views(lf):
        u, v = view
        if view == (u_c, v_c):
            maps[view] = sharp
        elif u == u_c:
            maps[view] = DepthMap(horiz[v])
        else:
            maps[view] = DepthMap(vert[u])
    return maps, n_guides


def _fill_remaining(
    lf: LightField, maps: dict[tuple[int, int], DepthMap], cfg: PipelineConfig
) -> dict[tuple[int, int], DepthMap]:
    u_c, v_c = lf.center
    targets = [(u, v) for u in range(lf.U) for v in range(lf.V) if u != u_c and v != v_c]

    def work(view):
        u, v = view
        return synthesize_noncrosshair(
            maps[(u_c, v)], maps[(u, v_c)], view, lf.gray[u, v], lf.angular_shape,
            cfg.lambda_c, cfg.c, cfg.eps_s, cfg.tol, cfg.max_iter,
        )

    out = dict(maps)
    out.update(zip(targets, _pmap(work, targets, cfg.threads)))
    return {view: out[view] for view in sorted(out)}


def run(
    lf: LightField, cfg: PipelineConfig = PipelineConfig(), progress: Progress | None = None
) -> PipelineResult:
    """Run the stages needed for ``cfg.views_mode`` and collect diagnostics."""
    timings: dict[str, float] = {}
    counts: dict[str, int] = {}

    t0 = time.perf_counter()
    _report(progress, "edges", 0.0)
    lines = detect_crosshair_lines(lf, cfg)
    counts["lines"] = sum(len(v[1]) for v in lines.values())
    timings["edges"] = time.perf_counter() - t0
    _report(progress, "edges", 1.0)

    t0 = time.perf_counter()
    center, n_labels = _center_from_lines(lf, lines, cfg)
    counts["center_labels"] = n_labels
    timings["center"] = time.perf_counter() - t0
    _report(progress, "center", 1.0)
    if cfg.views_mode is ViewsMode.CENTER:
        return PipelineResult({lf.center: center}, center, None, timings, counts)

    t0 = time.perf_counter()
    sharp = sharpen_depth(center, lf.views[lf.u_c, lf.v_c], cfg.r, cfg.eps_wmf)
    timings["sharpen"] = time.perf_counter() - t0
    _report(progress, "sharpen", 1.0)

    t0 = time.perf_counter()
    maps, n_guides = _inpaint_crosshair(lf, lines, sharp, cfg, progress)
    counts["line_guides"] = n_guides
    timings["crosshair"] = time.perf_counter() - t0
    if cfg.views_mode is ViewsMode.CROSSHAIR:
        return PipelineResult(maps, center, sharp, timings, counts)

    t0 = time.perf_counter()
    maps = _fill_remaining(lf, maps, cfg)
    timings["noncrosshair"] = time.perf_counter() - t0
    _report(progress, "noncrosshair", 1.0)
    return PipelineResult(maps, center, sharp, timings, counts)


def warp_labels(
    labels: Iterable[SparseLabel], src_view: tuple[int, int], dst_view: tuple[int, int], shape: tuple[int, int]
) -> list[SparseLabel]:
    """Move sparse labels to another view by their own disparity (nearer label wins a pixel)."""
    H, W = shape
    du = dst_view[0] - src_view[0]
    dv = dst_view[1] - src_view[1]
    best: dict[tuple[int, int], list[SparseLabel]] = {}
    for lb in labels:
        x = int(math.floor(lb.pixel[0] + lb.d * dv + 0.5))
        y = int(math.floor(lb.pixel[1] + lb.d * du + 0.5))
        if not (0 <= x < W and 0 <= y < H):
            continue
        prev = best.get((x, y))
        moved = SparseLabel(tuple(dst_view), (x, y), lb.d, lb.weight, lb.source)
        if prev is None or lb.d > prev[0].d + 1e-9:
            best[(x, y)] = [moved]
        elif abs(lb.d - prev[0].d) <= 1e-9:
            prev.append(moved)
    return [lb for key in sorted(best) for lb in best[key]]


def estimate_independent(
    lf: LightField,
    cfg: PipelineConfig = PipelineConfig(),
    views: Iterable[tuple[int, int]] | None = None,
    lines: dict | None = None,
) -> dict[tuple[int, int], DepthMap]:
    """Ablation: every view diffused on its own from reprojected central labels.

    The sparse central-view labels are moved into each view with their own
    disparities and diffused spatially with that view's intensity. No
    angular coupling is used, so each map is estimated independently.
    """
    if lines is None:
        lines = detect_crosshair_lines(lf, cfg)
    labels = center_view_labels(lines.values(), two_way=cfg.two_way)
    if not labels:
        raise PipelineError("no depth edges detected")
    views = sorted(views) if views is not None else [(u, v) for u in range(lf.U) for v in range(lf.V)]

    def work(view):
        moved = warp_labels(labels, lf.center, view, lf.spatial_shape)
        return diffuse_grid(lf.gray[view], moved, None, cfg.c, cfg.eps_s, cfg.tol, cfg.max_iter)

    return dict(zip(views, _pmap(work, views, cfg.threads)))
