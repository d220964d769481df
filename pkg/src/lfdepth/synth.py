"""Layered fronto-parallel scenes with exact per-view ground truth.

Each layer is a textured rectangle at a constant disparity. A view is
rendered by shifting every layer by ``d * (a - a_c)`` along both angular
axes and compositing front over back, so occlusion and disocclusion regions
are known exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import DepthMap, LightField, LightFieldError


class SceneSpecError(LightFieldError, ValueError):
    pass


TEXTURE_KINDS = ("checker", "noise", "gradient")


@dataclass(frozen=True)
class Texture:
    kind: str = "noise"
    scale: float = 4.0
    seed: int = 0
    blur: float = 0.0
    contrast: float = 1.0
    brightness: float = 0.5


@dataclass(frozen=True)
class Layer:
    """``rect`` is ``(x0, y0, x1, y1)`` in the centre view; ``None`` = everywhere."""

    disparity: float
    texture: Texture = field(default_factory=Texture)
    rect: tuple[int, int, int, int] | None = None


@dataclass(frozen=True)
class SceneSpec:
    layers: tuple[Layer, ...]
    disparity_min: float | None = None
    disparity_max: float | None = None
    subpixel: bool = False
    name: str = "synthetic"
    blur: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self.validate()

    @property
    def disparity_range(self) -> tuple[float, float]:
        ds = [layer.disparity for layer in self.layers]
        lo = self.disparity_min if self.disparity_min is not None else min(ds) - 1.0
        hi = self.disparity_max if self.disparity_max is not None else max(ds) + 1.0
        return float(lo), float(hi)

    def validate(self) -> None:
        if not self.layers:
            raise SceneSpecError("scene has no layers")
        bg = self.layers[0]
        if bg.rect is not None:
            raise SceneSpecError("first layer must be a full-extent background (rect=null)")
        ds = [layer.disparity for layer in self.layers]
        if any(b < a for a, b in zip(ds, ds[1:])):
            raise SceneSpecError("layers must be sorted back-to-front (non-decreasing disparity)")
        for layer in self.layers[1:]:
            if layer.rect is None:
                raise SceneSpecError("only the background layer may be full-extent")
        for layer in self.layers:
            if layer.texture.kind not in TEXTURE_KINDS:
                raise SceneSpecError(f"unknown texture kind {layer.texture.kind!r}")
            if layer.texture.scale <= 0:
                raise SceneSpecError("texture scale must be positive")
        lo, hi = self.disparity_range
        if not lo < hi:
            raise SceneSpecError(f"empty disparity range ({lo}, {hi})")
        bound = max(abs(lo), abs(hi))
        if any(abs(d) > bound + 1e-12 for d in ds):
            raise SceneSpecError("layer disparity exceeds the scene disparity range")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "disparity_min": self.disparity_min,
            "disparity_max": self.disparity_max,
            "subpixel": self.subpixel,
            "blur": self.blur,
            "layers": [
                {
                    "disparity": layer.disparity,
                    "texture": asdict(layer.texture),
                    "rect": list(layer.rect) if layer.rect is not None else None,
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            layers = tuple(
                Layer(
                    disparity=float(item["disparity"]),
                    texture=Texture(**item.get("texture", {})),
                    rect=tuple(int(c) for c in item["rect"]) if item.get("rect") is not None else None,
                )
                for item in d["layers"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneSpecError(f"malformed scene spec: {exc}") from exc
        return cls(
            layers=layers,
            disparity_min=d.get("disparity_min"),
            disparity_max=d.get("disparity_max"),
            subpixel=bool(d.get("subpixel", False)),
            name=d.get("name", "synthetic"),
            blur=float(d.get("blur", 0.0)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "SceneSpec":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SceneSpecError(f"cannot read scene spec {path}: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def canonical_scene() -> SceneSpec:
    """Two-layer test scene: checkered square at d=2 over a d=0 background.

    Sized for 64x64 views; the foreground covers ``[20, 44)^2`` in the
    centre view.
    """
    return SceneSpec(
        layers=(
            Layer(0.0, Texture("checker", scale=6, seed=11)),
            Layer(2.0, Texture("checker", scale=6, seed=23), rect=(20, 20, 44, 44)),
        ),
        disparity_min=-1.0,
        disparity_max=3.0,
        name="two_layer",
    )


def _texture_canvas(tex: Texture, shape: tuple[int, int], origin: int) -> np.ndarray:
    """RGB texture on a canvas whose pixel (0, 0) is layer coordinate -origin."""
    h, w = shape
    rng = np.random.default_rng(tex.seed)
    ys = np.arange(h)[:, None] - origin
    xs = np.arange(w)[None, :] - origin
    if tex.kind == "noise":
        scale = max(1, int(round(tex.scale)))
        nby = -(-h // scale) + 1
        nbx = -(-w // scale) + 1
        blocks = rng.uniform(0.0, 1.0, size=(nby, nbx, 3))
        iy = (np.arange(h) // scale)[:, None]
        ix = (np.arange(w) // scale)[None, :]
        img = blocks[iy, ix]
    elif tex.kind == "checker":
        c0, c1 = rng.uniform(0.0, 1.0, size=(2, 3))
        parity = (np.floor(ys / tex.scale) + np.floor(xs / tex.scale)) % 2
        img = np.where(parity[..., None] > 0, c1, c0)
    else:
        color = rng.uniform(0.3, 1.0, size=3)
        ramp = 0.15 + 0.7 * np.mod(xs, tex.scale) / tex.scale
        img = np.broadcast_to(ramp[..., None] * color, (h, w, 3)).copy()
    img = tex.brightness + tex.contrast * (img - 0.5)
    if tex.blur > 0:
        img = ndimage.gaussian_filter(img, sigma=(tex.blur, tex.blur, 0), mode="nearest")
    return np.clip(img, 0.0, 1.0)


def synth_lightfield(
    spec: SceneSpec, U: int, V: int, H: int, W: int
) -> tuple[LightField, dict[tuple[int, int], DepthMap]]:
    """Render ``spec`` into a ``U x V x H x W`` light field with per-view GT.

    Returns the light field and a dict mapping every ``(u, v)`` to its
    ground-truth disparity (front-most layer's ``d``, complete). Use
    :func:`render_layer_ids` for the matching layer-index maps.
    """
    lf, gt, _ = _render(spec, U, V, H, W)
    return lf, gt


def render_layer_ids(spec: SceneSpec, U: int, V: int, H: int, W: int) -> dict[tuple[int, int], np.ndarray]:
    """Index of the front-most layer at every pixel of every view."""
    return _render(spec, U, V, H, W)[2]


def _render(spec: SceneSpec, U: int, V: int, H: int, W: int):
    spec.validate()
    u_c, v_c = (U - 1) // 2, (V - 1) // 2
    max_shift = max(abs(layer.disparity) for layer in spec.layers) * max(u_c, v_c)
    pad = int(math.ceil(max_shift)) + 2
    canvas_shape = (H + 2 * pad, W + 2 * pad)
    canvases = [_texture_canvas(layer.texture, canvas_shape, pad) for layer in spec.layers]

    for layer in spec.layers[1:]:
        x0, y0, x1, y1 = layer.rect
        if min(x1, W) <= max(x0, 0) or min(y1, H) <= max(y0, 0):
            raise SceneSpecError(f"layer rect {layer.rect} is empty after clipping to {W}x{H}")

    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    views = np.zeros((U, V, H, W, 3))
    gt: dict[tuple[int, int], DepthMap] = {}
    ids: dict[tuple[int, int], np.ndarray] = {}
    for u in range(U):
        for v in range(V):
            img = np.zeros((H, W, 3))
            disp = np.zeros((H, W))
            lid = np.zeros((H, W), dtype=np.int64)
            for k, (layer, canvas) in enumerate(zip(spec.layers, canvases)):
                d = layer.disparity
                # layer coordinates seen at this view's pixel
                ly = yy - d * (u - u_c)
                lx = xx - d * (v - v_c)
                if spec.subpixel:
                    coords = [ly + pad, lx + pad]
                    sample = np.stack(
                        [ndimage.map_coordinates(canvas[..., c], coords, order=1, mode="nearest") for c in range(3)],
                        axis=-1,
                    )
                else:
                    iy = np.floor(ly + 0.5).astype(np.int64) + pad
                    ix = np.floor(lx + 0.5).astype(np.int64) + pad
                    sample = canvas[iy, ix]
                if layer.rect is None:
                    cover = np.ones((H, W), dtype=bool)
                else:
                    x0, y0, x1, y1 = layer.rect
                    ry = np.floor(ly + 0.5) if not spec.subpixel else ly
                    rx = np.floor(lx + 0.5) if not spec.subpixel else lx
                    cover = (rx >= x0) & (rx < x1) & (ry >= y0) & (ry < y1)
                img[cover] = sample[cover]
                disp[cover] = d
                lid[cover] = k
            if spec.blur > 0:
                # camera PSF, applied after compositing so depth edges are band-limited too
                img = ndimage.gaussian_filter(img, sigma=(spec.blur, spec.blur, 0), mode="nearest")
            views[u, v] = img
            gt[(u, v)] = DepthMap(disp)
            ids[(u, v)] = lid
    # 8-bit levels so PNG storage is lossless
    views = np.round(views * 255.0) / 255.0
    lf = LightField(views, name=spec.name, disparity_range=spec.disparity_range)
    return lf, gt, ids
