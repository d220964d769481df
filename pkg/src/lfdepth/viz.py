"""Heat-map rendering of disparity and error maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .core import DepthMap

NAN_COLOR = (255, 0, 255)
COLORMAP = "viridis"


def colorize(
    values: np.ndarray, value_range: tuple[float, float] | None = None, cmap: str = COLORMAP
) -> np.ndarray:
    """``uint8`` RGB image of ``values``; non-finite pixels are magenta.

    Without ``value_range`` the finite min/max is used; a constant map
    renders as the lowest colour.
    """
    values = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(values)
    if value_range is None:
        if finite.any():
            lo, hi = float(values[finite].min()), float(values[finite].max())
        else:
            lo, hi = 0.0, 1.0
        if hi <= lo:
            hi = lo + 1.0
    else:
        lo, hi = map(float, value_range)
        if not lo < hi:
            raise ValueError(f"range lower bound must be below upper bound, got {lo} >= {hi}")
    t = np.clip((np.where(finite, values, lo) - lo) / (hi - lo), 0.0, 1.0)
    lut = (colormaps[cmap](np.linspace(0.0, 1.0, 256))[:, :3] * 255.0 + 0.5).astype(np.uint8)
    rgb = lut[np.round(t * 255).astype(np.int64)]
    rgb[~finite] = NAN_COLOR
    return rgb


def error_map(est: DepthMap, ref: DepthMap) -> np.ndarray:
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    return np.abs(est.disp - ref.disp)


def render_heatmap(
    path: str | Path,
    depth: DepthMap,
    value_range: tuple[float, float] | None = None,
    ref: DepthMap | None = None,
) -> np.ndarray:
    """Write a PNG heat map of ``depth`` (or ``|depth - ref|`` when ``ref`` is given)."""
    values = depth.disp if ref is None else error_map(depth, ref)
    if ref is not None and value_range is None:
        # errors are anchored at zero
        top = np.nanmax(values) if np.isfinite(values).any() else 0.0
        value_range = (0.0, float(top) if top > 0 else 1.0)
    rgb = colorize(values, value_range)
    Image.fromarray(rgb).save(Path(path))
    return rgb
