"""Accuracy and multi-view consistency metrics for disparity maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import DepthMap
from .reproject import warp_depth

BAD_THRESHOLDS = (0.01, 0.03, 0.07)


def _threshold_key(t: float) -> str:
    return f"bad_{round(t * 100):03d}"


@dataclass(frozen=True)
class AccuracyReport:
    mse_x100: float
    bad_pixel_pct: dict[float, float]
    n_evaluated: int

    def to_dict(self) -> dict:
        out = {"mse_x100": self.mse_x100, "n_evaluated": self.n_evaluated}
        for t, v in sorted(self.bad_pixel_pct.items()):
            out[_threshold_key(t)] = v
        return out


@dataclass(frozen=True, eq=False)
class ConsistencyReport:
    """Per-pixel variance of all views warped onto ``target`` (NaN = excluded)."""

    per_pixel: np.ndarray
    mean: float
    n_views: int
    target: tuple[int, int] = (0, 0)
    contributors: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "target": list(self.target),
            "consistency_mean": self.mean,
            "n_views": self.n_views,
            "n_evaluated": int(np.isfinite(self.per_pixel).sum()),
        }


def _eval_mask(est: DepthMap, gt: DepthMap, mask: np.ndarray | None) -> np.ndarray:
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {gt.shape}")
    m = est.valid & gt.valid
    if mask is not None:
        m = m & np.asarray(mask, dtype=bool)
    if not m.any():
        raise ValueError("empty evaluation mask")
    return m


def mse_x100(est: DepthMap, gt: DepthMap, mask: np.ndarray | None = None) -> float:
    """``100 * mean((est - gt)^2)`` over ``mask`` and both valid masks."""
    m = _eval_mask(est, gt, mask)
    e = est.disp[m] - gt.disp[m]
    return float(100.0 * np.mean(e * e))


def bad_pixels(
    est: DepthMap, gt: DepthMap, threshold: float, mask: np.ndarray | None = None
) -> float:
    """Percentage of pixels with ``|est - gt| > threshold`` (strict)."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    m = _eval_mask(est, gt, mask)
    e = np.abs(est.disp[m] - gt.disp[m])
    return float(100.0 * np.count_nonzero(e > threshold) / e.size)


def accuracy(
    est: DepthMap,
    gt: DepthMap,
    mask: np.ndarray | None = None,
    thresholds: tuple[float, ...] = BAD_THRESHOLDS,
) -> AccuracyReport:
    m = _eval_mask(est, gt, mask)
    return AccuracyReport(
        mse_x100=mse_x100(est, gt, m),
        bad_pixel_pct={t: bad_pixels(est, gt, t, m) for t in thresholds},
        n_evaluated=int(m.sum()),
    )


def stack_variance(stack: np.ndarray, min_count: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Population variance over axis 0 ignoring NaN.

    Returns ``(variance, count)``; pixels with fewer than ``min_count``
    finite entries get NaN.
    """
    stack = np.asarray(stack, dtype=np.float64)
    finite = np.isfinite(stack)
    count = finite.sum(axis=0)
    vals = np.where(finite, stack, 0.0)
    n = np.maximum(count, 1)
    mu = vals.sum(axis=0) / n
    var = np.where(finite, (stack - mu) ** 2, 0.0).sum(axis=0) / n
    return np.where(count >= min_count, var, np.nan), count


def view_consistency(
    maps: Mapping[tuple[int, int], DepthMap], target: tuple[int, int]
) -> ConsistencyReport:
    """Variance of every view's map forward-warped onto ``target``.

    Each map is warped with its own disparities (larger disparity wins
    collisions). The mean runs over pixels reached by at least two views.
    """
    if len(maps) < 2:
        raise ValueError("consistency needs at least two views")
    views = sorted(maps)
    warped = []
    for view in views:
        dm = maps[view]
        warped.append(dm.disp if tuple(view) == tuple(target) else warp_depth(dm, view, target).depth.disp)
    var, count = stack_variance(np.stack(warped))
    ok = np.isfinite(var)
    mean = float(var[ok].mean()) if ok.any() else float("nan")
    return ConsistencyReport(var, mean, len(views), tuple(target), count)


def report_dict(
    estimates: Mapping[tuple[int, int], DepthMap],
    ground_truth: Mapping[tuple[int, int], DepthMap] | None = None,
    target: tuple[int, int] | None = None,
) -> dict:
    """JSON-ready summary with keys ``views``, ``accuracy``, ``consistency``, ``global``."""
    views = sorted(estimates)
    acc = {}
    if ground_truth:
        for view in views:
            if view in ground_truth:
                acc[f"{view[0]:02d}_{view[1]:02d}"] = accuracy(estimates[view], ground_truth[view]).to_dict()
    cons = None
    if len(views) >= 2:
        if target is None:
            us = sorted({u for u, _ in views})
            vs = sorted({v for _, v in views})
            target = (us[len(us) // 2], vs[len(vs) // 2])
        cons = view_consistency(estimates, target).to_dict()
    glob: dict = {}
    if acc:
        for key in next(iter(acc.values())):
            if key != "n_evaluated":
                glob[key] = float(np.mean([a[key] for a in acc.values()]))
    if cons is not None:
        glob["consistency_mean"] = cons["consistency_mean"]
    return {
        "views": [list(v) for v in views],
        "accuracy": acc,
        "consistency": cons,
        "global": glob,
    }


def write_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, allow_nan=True), encoding="utf-8")
