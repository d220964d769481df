"""Light-field directories, JSON manifests and PFM disparity maps.

A light field on disk is a directory of 8-bit RGB PNG frames plus a
``manifest.json``::

    {"width": 512, "height": 512, "views_u": 9, "views_v": 9,
     "frame_pattern": "input_Cam{index:03d}.png",
     "disparity_min": -2.0, "disparity_max": 2.0,
     "index_order": "row_major"}

Frame ``index`` is ``u * views_v + v`` for row-major order and
``v * views_u + u`` for column-major order.
"""

from __future__ import annotations

import configparser
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from PIL import Image

from .core import DepthMap, LightField, LightFieldError

MANIFEST_NAME = "manifest.json"
DEFAULT_PATTERN = "input_Cam{index:03d}.png"
INDEX_ORDERS = ("row_major", "column_major")


class LoadError(LightFieldError, ValueError):
    pass


class PfmError(LightFieldError, ValueError):
    pass


@dataclass(frozen=True)
class Manifest:
    width: int
    height: int
    views_u: int
    views_v: int
    disparity_min: float
    disparity_max: float
    frame_pattern: str = DEFAULT_PATTERN
    index_order: str = "row_major"
    # central crop (cu, cv) of the angular grid, or None for all views
    crop: tuple[int, int] | None = None
    # -1 flips both angular axes so stored data matches our disparity sign
    disparity_sign: int = 1
    name: str = "lightfield"

    def __post_init__(self):
        for key in ("width", "height", "views_u", "views_v"):
            if int(getattr(self, key)) <= 0:
                raise LoadError(f"manifest field {key!r} must be positive")
        if self.views_u % 2 == 0 or self.views_v % 2 == 0:
            raise LoadError(
                f"manifest fields 'views_u'/'views_v' must be odd, got {self.views_u}x{self.views_v}"
            )
        if self.index_order not in INDEX_ORDERS:
            raise LoadError(f"manifest field 'index_order' must be one of {INDEX_ORDERS}")
        if not self.disparity_min < self.disparity_max:
            raise LoadError("manifest fields 'disparity_min' < 'disparity_max' violated")
        if self.disparity_sign not in (1, -1):
            raise LoadError("manifest field 'disparity_sign' must be 1 or -1")
        if self.crop is not None:
            cu, cv = self.crop
            if cu % 2 == 0 or cv % 2 == 0 or cu > self.views_u or cv > self.views_v or cu < 3 or cv < 3:
                raise LoadError(f"manifest field 'crop' {self.crop} is not an odd sub-grid of the views")
        try:
            self.frame_name(0)
        except (KeyError, IndexError, ValueError) as exc:
            raise LoadError(f"manifest field 'frame_pattern' is invalid: {exc}") from exc

    def frame_index(self, u: int, v: int) -> int:
        if self.index_order == "row_major":
            return u * self.views_v + v
        return v * self.views_u + u

    def frame_name(self, index: int) -> str:
        return self.frame_pattern.format(index=index)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.crop is not None:
            d["crop"] = list(self.crop)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Manifest":
        required = ("width", "height", "views_u", "views_v", "disparity_min", "disparity_max")
        for key in required:
            if key not in d:
                raise LoadError(f"manifest is missing field {key!r}")
        try:
            crop = d.get("crop")
            if isinstance(crop, int):
                crop = (crop, crop)
            return cls(
                width=int(d["width"]),
                height=int(d["height"]),
                views_u=int(d["views_u"]),
                views_v=int(d["views_v"]),
                disparity_min=float(d["disparity_min"]),
                disparity_max=float(d["disparity_max"]),
                frame_pattern=str(d.get("frame_pattern", DEFAULT_PATTERN)),
                index_order=str(d.get("index_order", "row_major")),
                crop=tuple(int(c) for c in crop) if crop is not None else None,
                disparity_sign=int(d.get("disparity_sign", 1)),
                name=str(d.get("name", "lightfield")),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, LoadError):
                raise
            raise LoadError(f"malformed manifest: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise LoadError(f"manifest not found: {path}") from exc
        except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise LoadError(f"cannot parse manifest {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise LoadError(f"manifest {path} is not a JSON object")
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def _read_png(path: Path) -> np.ndarray:
    if not path.is_file():
        raise LoadError(f"missing frame: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise LoadError(f"cannot decode frame {path}: {exc}") from exc
    return arr / 255.0


def load_lightfield(manifest_path: str | Path, threads: int = 1) -> LightField:
    """Read every frame named by the manifest; frames are resolved relative to it."""
    manifest_path = Path(manifest_path)
    man = Manifest.load(manifest_path)
    root = manifest_path.parent
    U, V = man.views_u, man.views_v
    keys = [(u, v) for u in range(U) for v in range(V)]
    paths = [root / man.frame_name(man.frame_index(u, v)) for u, v in keys]
    for (u, v), p in zip(keys, paths):
        if not p.is_file():
            raise LoadError(f"missing frame index {man.frame_index(u, v)} (view {u},{v}): {p}")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            frames = list(ex.map(_read_png, paths))
    else:
        frames = [_read_png(p) for p in paths]
    views = np.empty((U, V, man.height, man.width, 3))
    for (u, v), p, img in zip(keys, paths, frames):
        if img.shape[:2] != (man.height, man.width):
            raise LoadError(
                f"frame {p} is {img.shape[1]}x{img.shape[0]}, manifest says {man.width}x{man.height}"
            )
        views[u, v] = img
    if man.crop is not None:
        cu, cv = man.crop
        u0, v0 = (U - cu) // 2, (V - cv) // 2
        views = views[u0 : u0 + cu, v0 : v0 + cv]
    if man.disparity_sign < 0:
        views = views[::-1, ::-1]
    return LightField(views, name=man.name, disparity_range=(man.disparity_min, man.disparity_max))


def _write_png(path: Path, img: np.ndarray) -> None:
    q = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q).save(path)


def save_lightfield(
    lf: LightField, out_dir: str | Path, frame_pattern: str = DEFAULT_PATTERN
) -> Path:
    """Write PNG frames and a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = lf.disparity_range
    man = Manifest(
        width=lf.W,
        height=lf.H,
        views_u=lf.U,
        views_v=lf.V,
        disparity_min=lo,
        disparity_max=hi,
        frame_pattern=frame_pattern,
        name=lf.name,
    )
    for u in range(lf.U):
        for v in range(lf.V):
            _write_png(out / man.frame_name(man.frame_index(u, v)), lf.views[u, v])
    path = out / MANIFEST_NAME
    man.save(path)
    return path


def read_pfm(path: str | Path) -> DepthMap:
    """Single-channel PFM; non-finite values become invalid pixels."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise PfmError(f"cannot read {path}: {exc}") from exc
    # three whitespace-terminated header tokens
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+([-+]?[0-9.eE+-]+)\s", raw)
    if m is None:
        if raw[:2] == b"PF":
            raise PfmError(f"{path}: colour PFM ('PF') is not supported")
        raise PfmError(f"{path}: malformed PFM header")
    if m.group(1) == b"PF":
        raise PfmError(f"{path}: colour PFM ('PF') is not supported")
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError as exc:
        raise PfmError(f"{path}: bad scale line") from exc
    if w <= 0 or h <= 0 or scale == 0:
        raise PfmError(f"{path}: invalid dimensions or scale")
    dtype = "<f4" if scale < 0 else ">f4"
    payload = raw[m.end() :]
    if len(payload) < w * h * 4:
        raise PfmError(f"{path}: truncated payload ({len(payload)} of {w * h * 4} bytes)")
    data = np.frombuffer(payload, dtype=dtype, count=w * h).reshape(h, w)
    return DepthMap(np.flipud(data).astype(np.float64))


def write_pfm(path: str | Path, depth: DepthMap | np.ndarray) -> None:
    """Little-endian ``Pf`` file with rows bottom-to-top; invalid pixels as NaN."""
    disp = depth.disp if isinstance(depth, DepthMap) else np.asarray(depth, dtype=np.float64)
    h, w = disp.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.flipud(disp).astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def depth_name(view: tuple[int, int], prefix: str = "depth") -> str:
    return f"{prefix}_{view[0]:02d}_{view[1]:02d}.pfm"


_NAME_RE = re.compile(r"^(?P<prefix>[a-z]+)_(?P<u>\d{2})_(?P<v>\d{2})\.pfm$")


def read_depth_dir(directory: str | Path) -> dict[tuple[int, int], DepthMap]:
    """All ``<prefix>_UU_VV.pfm`` maps in ``directory`` keyed by view."""
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"not a directory: {directory}")
    maps = {}
    for p in sorted(directory.iterdir()):
        m = _NAME_RE.match(p.name)
        if m:
            view = (int(m.group("u")), int(m.group("v")))
            if view in maps:
                raise LoadError(f"duplicate maps for view {view} in {directory}")
            maps[view] = read_pfm(p)
    return maps


def manifest_from_hci(cfg_path: str | Path, frame_pattern: str = DEFAULT_PATTERN) -> Manifest:
    """Convert an HCI-benchmark ``parameters.cfg`` into a :class:`Manifest`."""
    cp = configparser.ConfigParser()
    try:
        with open(cfg_path, encoding="utf-8") as fh:
            cp.read_file(fh)
        return Manifest(
            width=cp.getint("intrinsics", "image_resolution_x_px"),
            height=cp.getint("intrinsics", "image_resolution_y_px"),
            views_u=cp.getint("extrinsics", "num_cams_y"),
            views_v=cp.getint("extrinsics", "num_cams_x"),
            disparity_min=cp.getfloat("meta", "disp_min"),
            disparity_max=cp.getfloat("meta", "disp_max"),
            frame_pattern=frame_pattern,
            name=cp.get("meta", "scene", fallback=Path(cfg_path).parent.name),
        )
    except (OSError, configparser.Error, ValueError) as exc:
        if isinstance(exc, LoadError):
            raise
        raise LoadError(f"cannot convert {cfg_path}: {exc}") from exc

