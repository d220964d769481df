"""Containers and coordinate conventions for 4D light fields.

Angular indices are ``(u, v)``: ``u`` selects the row of the camera grid and
``v`` the column. Spatial indices are ``(y, x)`` (row ``t``, column ``s``).

Disparity convention, shared by every module: a scene point at spatial
position ``s`` in view ``a0`` of an EPI appears at ``s + d * (a - a0)`` in
view ``a``. For full views this reads ``x' = x + d * (v' - v)`` and
``y' = y + d * (u' - u)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
DISPARITY_SIGN = 1


class LightFieldError(Exception):
    """Base class for errors raised by this package."""


class AngularRangeError(LightFieldError, IndexError):
    pass


class DegenerateInputError(LightFieldError, ValueError):
    pass


class Orientation(str, enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


def _frozen(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an ``(..., 3)`` array."""
    return np.asarray(rgb, dtype=np.float64) @ LUMA_WEIGHTS


@dataclass(frozen=True, eq=False)
class LightField:
    """A ``U x V`` grid of ``H x W`` RGB sub-aperture images in ``[0, 1]``.

    ``views`` has shape ``(U, V, H, W, 3)`` and ``gray`` ``(U, V, H, W)``.
    Both are read-only once constructed.
    """

    views: np.ndarray
    name: str = "lightfield"
    disparity_range: tuple[float, float] = (-2.0, 2.0)
    gray: np.ndarray = field(default=None)

    def __post_init__(self):
        views = np.asarray(self.views, dtype=np.float64)
        if views.ndim == 4:
            views = np.repeat(views[..., None], 3, axis=-1)
        if views.ndim != 5 or views.shape[-1] != 3:
            raise DegenerateInputError(
                f"views must have shape (U, V, H, W, 3), got {views.shape}"
            )
        U, V = views.shape[:2]
        if U < 3 or V < 3 or U % 2 == 0 or V % 2 == 0:
            raise DegenerateInputError(
                f"angular grid must be odd and at least 3x3, got {U}x{V}"
            )
        lo, hi = self.disparity_range
        if not lo < hi:
            raise DegenerateInputError(f"empty disparity range {self.disparity_range}")
        object.__setattr__(self, "views", _frozen(views))
        object.__setattr__(self, "gray", _frozen(to_gray(views)))
        object.__setattr__(self, "disparity_range", (float(lo), float(hi)))

    @property
    def U(self) -> int:
        return self.views.shape[0]

    @property
    def V(self) -> int:
        return self.views.shape[1]

    @property
    def H(self) -> int:
        return self.views.shape[2]

    @property
    def W(self) -> int:
        return self.views.shape[3]

    @property
    def u_c(self) -> int:
        return (self.U - 1) // 2

    @property
    def v_c(self) -> int:
        return (self.V - 1) // 2

    @property
    def center(self) -> tuple[int, int]:
        return self.u_c, self.v_c

    @property
    def angular_shape(self) -> tuple[int, int]:
        return self.U, self.V

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.H, self.W


@dataclass(frozen=True, eq=False)
class Epi:
    """Angular-by-spatial slice ``data[a, s]`` of a light field.

    Horizontal EPIs hold the central view row ``u_c`` and a spatial row ``t``
    (``fixed_spatial``); the angular axis runs over ``v``. Vertical EPIs
    hold column ``v_c`` and spatial column ``s``; the angular axis runs over
    ``u``.
    """

    data: np.ndarray
    orientation: Orientation
    fixed_angular: int
    fixed_spatial: int

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data))

    @property
    def A(self) -> int:
        return self.data.shape[0]

    @property
    def S(self) -> int:
        return self.data.shape[1]

    @property
    def a_c(self) -> int:
        return (self.A - 1) // 2

    def view_of(self, a: int) -> tuple[int, int]:
        """Angular ``(u, v)`` of EPI row ``a``."""
        if self.orientation is Orientation.HORIZONTAL:
            return self.fixed_angular, a
        return a, self.fixed_angular

    def pixel_of(self, s: int) -> tuple[int, int]:
        """Spatial ``(x, y)`` of EPI column ``s`` in any of its views."""
        if self.orientation is Orientation.HORIZONTAL:
            return s, self.fixed_spatial
        return self.fixed_spatial, s


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Dense disparity with validity mask; invalid pixels hold NaN."""

    disp: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        disp = np.array(self.disp, dtype=np.float64)
        if disp.ndim != 2:
            raise DegenerateInputError(f"depth map must be 2D, got {disp.shape}")
        if self.valid is None:
            valid = np.isfinite(disp)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != disp.shape:
                raise DegenerateInputError("valid mask shape does not match disparity")
            valid = valid & np.isfinite(disp)
        disp[~valid] = np.nan
        object.__setattr__(self, "disp", _frozen(disp))
        object.__setattr__(self, "valid", _frozen(valid, dtype=bool))

    @classmethod
    def full(cls, shape: tuple[int, int], value: float) -> "DepthMap":
        return cls(np.full(shape, float(value)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.disp.shape

    @property
    def complete(self) -> bool:
        return bool(self.valid.all())

    def filled(self, value: float = 0.0) -> np.ndarray:
        """Writable copy of ``disp`` with invalid pixels set to ``value``."""
        return np.where(self.valid, self.disp, value)


def _check_spatial(lf: LightField, orientation: Orientation, index: int) -> None:
    limit = lf.H if orientation is Orientation.HORIZONTAL else lf.W
    if not 0 <= index < limit:
        raise AngularRangeError(
            f"{orientation.value} EPI index {index} outside [0, {limit})"
        )


def extract_epi(
    lf: LightField,
    orientation: Orientation | str,
    fixed_spatial: int,
    color: bool = False,
) -> Epi:
    """Slice a cross-hair EPI out of ``lf``.

    Horizontal: ``data[a, s] = gray[u_c, a, t, s]``. Vertical:
    ``data[a, t] = gray[a, v_c, t, s]``. With ``color=True`` the RGB views
    are sliced instead and ``data`` gains a trailing channel axis.
    """
    orientation = Orientation(orientation)
    _check_spatial(lf, orientation, fixed_spatial)
    src = lf.views if color else lf.gray
    if orientation is Orientation.HORIZONTAL:
        data = src[lf.u_c, :, fixed_spatial, :]
        fixed_angular = lf.u_c
    else:
        data = src[:, lf.v_c, :, fixed_spatial]
        fixed_angular = lf.v_c
    return Epi(data, orientation, fixed_angular, fixed_spatial)


def embed_epi(stack: np.ndarray, epi: Epi) -> None:
    """Write ``epi.data`` back into a ``(U, V, H, W)`` array in place."""
    if epi.orientation is Orientation.HORIZONTAL:
        stack[epi.fixed_angular, :, epi.fixed_spatial, :] = epi.data
    else:
        stack[:, epi.fixed_angular, :, epi.fixed_spatial] = epi.data


def epi_gradient(epi: Epi | np.ndarray, sigma: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Spatial and angular derivatives ``(gx, gy)`` of a single-channel EPI.

    ``gx`` is the derivative along ``s`` and ``gy`` along ``a``. With
    ``sigma == 0`` these are central differences (one-sided at the borders);
    otherwise Gaussian derivatives of that scale, which keep the gradient
    direction stable on aliased, steeply sloped edges.
    """
    data = epi.data if isinstance(epi, Epi) else np.asarray(epi, dtype=np.float64)
    if data.ndim != 2 or min(data.shape) < 2:
        raise DegenerateInputError(f"EPI gradient needs at least 2x2, got {data.shape}")
    if sigma > 0:
        # odd reflection across the first/last view keeps the angular
        # derivative unbiased there; symmetric padding would halve it
        k = min(int(math.ceil(4 * sigma)) + 1, data.shape[0] - 1)
        top = 2 * data[:1] - data[k:0:-1]
        bottom = 2 * data[-1:] - data[-2 : -k - 2 : -1]
        padded = np.concatenate([top, data, bottom])
        gx = ndimage.gaussian_filter(padded, sigma, order=(0, 1), mode="nearest")[k:-k]
        gy = ndimage.gaussian_filter(padded, sigma, order=(1, 0), mode="nearest")[k:-k]
        return gx, gy
    gy, gx = np.gradient(data)
    return gx, gy


def crosshair_views(lf_or_shape: LightField | tuple[int, int]) -> list[tuple[int, int]]:
    """Central row then central column of the angular grid, centre once.

    Accepts a light field or an angular ``(U, V)`` shape.
    """
    if isinstance(lf_or_shape, LightField):
        U, V = lf_or_shape.angular_shape
    else:
        U, V = lf_or_shape
    u_c, v_c = (U - 1) // 2, (V - 1) // 2
    views = [(u_c, v) for v in range(V)]
    views += [(u, v_c) for u in range(U) if u != u_c]
    return views


def is_crosshair(view: tuple[int, int], angular_shape: tuple[int, int]) -> bool:
    u, v = view
    U, V = angular_shape
    return u == (U - 1) // 2 or v == (V - 1) // 2


def all_views(angular_shape: tuple[int, int]) -> list[tuple[int, int]]:
    U, V = angular_shape
    return [(u, v) for u in range(U) for v in range(V)]
