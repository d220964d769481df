"""Occlusion-aware depth diffusion for 4D light fields.

Produces a view-consistent disparity map for every sub-aperture view from
EPI edge lines, central-view diffusion, occlusion-aware warping and angular
(EPI-space) inpainting.
"""

from .core import (
    DepthMap,
    Epi,
    LightField,
    Orientation,
    crosshair_views,
    epi_gradient,
    extract_epi,
)
from .io import load_lightfield, read_pfm, save_lightfield, write_pfm
from .metrics import accuracy, view_consistency
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    estimate_all,
    estimate_center,
    estimate_crosshair,
    estimate_independent,
    run,
)

__all__ = [
    "DepthMap",
    "Epi",
    "LightField",
    "Orientation",
    "PipelineConfig",
    "PipelineResult",
    "accuracy",
    "crosshair_views",
    "epi_gradient",
    "estimate_all",
    "estimate_center",
    "estimate_crosshair",
    "estimate_independent",
    "extract_epi",
    "load_lightfield",
    "read_pfm",
    "run",
    "save_lightfield",
    "view_consistency",
    "write_pfm",
]

__version__ = "0.1.0"
