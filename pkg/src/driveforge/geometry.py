"""Coordinate algebra for the fixed 2x3 six-camera composite.

All transforms here are 2D affine maps per grid cell: a per-view resize to
the cell size, a translation to the cell offset, and a per-axis rescale to
the integer grid used for serialized box coordinates. Coordinates live in
continuous pixel space with the origin at the top-left corner of the
top-left pixel.

Frames:
    * ``source``    -- pixels of one original camera image.
    * ``composite`` -- pixels of the assembled 2688x896 grid image.
    * normalized    -- integers in [0, 1000], per axis, over the composite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from .cameras import Camera

VIEW_W = 896
VIEW_H = 448
GRID_COLS = 3
GRID_ROWS = 2
NORM_SCALE = 1000

# Row-major grid assignment: front cameras on top, back cameras below.
GRID_PLACEMENT: Mapping[Camera, tuple[int, int]] = MappingProxyType({
    Camera.FRONT_LEFT: (0, 0),
    Camera.FRONT: (0, 1),
    Camera.FRONT_RIGHT: (0, 2),
    Camera.BACK_LEFT: (1, 0),
    Camera.BACK: (1, 1),
    Camera.BACK_RIGHT: (1, 2),
})


class OutOfRangeError(ValueError):
    """A coordinate fell outside the bounds of its frame."""

    def __init__(self, message: str, camera: Camera | None = None,
                 x: float | None = None, y: float | None = None):
        super().__init__(message)
        self.camera = camera
        self.x = x
        self.y = y


@dataclass(frozen=True)
class SourceDims:
    """Pixel dimensions of one camera's input image."""

    camera: Camera
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(
                f"invalid dims {self.width}x{self.height} for {self.camera.value}"
            )


@dataclass(frozen=True)
class PxPoint:
    x: float
    y: float
    frame: str = "source"


@dataclass(frozen=True)
class PxBox:
    """Axis-aligned box in continuous pixels; x2/y2 are exclusive."""

    x1: float
    y1: float
    x2: float
    y2: float
    frame: str = "source"

    def __post_init__(self):
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"box corners out of order: {self}")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def corners(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (self.x1, self.y1), (self.x2, self.y2)


@dataclass(frozen=True)
class NormBox:
    """Box with integer coordinates on the [0, 1000] composite grid."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not isinstance(v, int):
                raise ValueError(f"normalized coordinates must be int, got {v!r}")
            if not 0 <= v <= NORM_SCALE:
                raise ValueError(f"normalized coordinate {v} outside [0, {NORM_SCALE}]")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"box corners out of order: {self}")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)


def _default_placement() -> Mapping[Camera, tuple[int, int]]:
    return GRID_PLACEMENT


@dataclass(frozen=True)
class CompositeLayout:
    """Geometry of the 2x3 composite grid and its normalization constants."""

    view_w: int = VIEW_W
    view_h: int = VIEW_H
    cols: int = GRID_COLS
    rows: int = GRID_ROWS
    placement: Mapping[Camera, tuple[int, int]] = field(default_factory=_default_placement)
    norm_scale: int = NORM_SCALE

    def __post_init__(self):
        cells = set(self.placement.values())
        expected = {(r, c) for r in range(self.rows) for c in range(self.cols)}
        if set(self.placement) != set(Camera) or cells != expected:
            raise ValueError("placement must map the six cameras onto the six cells")

    @property
    def composite_w(self) -> int:
        return self.cols * self.view_w

    @property
    def composite_h(self) -> int:
        return self.rows * self.view_h

    @property
    def norm_denoms(self) -> tuple[int, int]:
        return (self.composite_w, self.composite_h)

    def cell_origin(self, camera: Camera) -> tuple[int, int]:
        """Pixel offset (x0, y0) of the camera's cell in the composite."""
        row, col = self.placement[camera]
        return col * self.view_w, row * self.view_h

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the half-open cell containing composite point (x, y).

        Cells are [left, right) x [top, bottom); the right and bottom edges
        of the whole composite fold into the last column/row.
        """
        col = min(int(x // self.view_w), self.cols - 1)
        row = min(int(y // self.view_h), self.rows - 1)
        return row, col

    def camera_at(self, row: int, col: int) -> Camera:
        for cam, cell in self.placement.items():
            if cell == (row, col):
                return cam
        raise KeyError((row, col))

    def snapshot(self) -> dict:
        """JSON-ready dump of every layout constant (for run manifests)."""
        return {
            "view_w": self.view_w,
            "view_h": self.view_h,
            "cols": self.cols,
            "rows": self.rows,
            "composite_w": self.composite_w,
            "composite_h": self.composite_h,
            "placement": {cam.value: list(cell) for cam, cell in self.placement.items()},
            "norm_denoms": list(self.norm_denoms),
            "norm_scale": self.norm_scale,
        }


DEFAULT_LAYOUT = CompositeLayout()


def round_half_away(v: float) -> int:
    """Round to nearest integer, ties away from zero."""
    if v >= 0:
        return math.floor(v + 0.5)
    return math.ceil(v - 0.5)


def to_composite(p: PxPoint, dims: SourceDims,
                 layout: CompositeLayout = DEFAULT_LAYOUT) -> PxPoint:
    """Map a source-frame point into the composite frame.

    The point is scaled by the per-view resize (view_w/width, view_h/height)
    and shifted to the camera's cell origin.

    Raises:
        OutOfRangeError: if the point lies outside the source image bounds.
    """
    if p.frame != "source":
        raise ValueError(f"expected a source-frame point, got frame={p.frame!r}")
    if not (0 <= p.x <= dims.width and 0 <= p.y <= dims.height):
        raise OutOfRangeError(
            f"point ({p.x}, {p.y}) outside {dims.width}x{dims.height} "
            f"bounds of {dims.camera.value}",
            camera=dims.camera, x=p.x, y=p.y,
        )
    ox, oy = layout.cell_origin(dims.camera)
    x = p.x * layout.view_w / dims.width + ox
    y = p.y * layout.view_h / dims.height + oy
    return PxPoint(x, y, frame="composite")


def box_to_composite(b: PxBox, dims: SourceDims,
                     layout: CompositeLayout = DEFAULT_LAYOUT) -> PxBox:
    """Map a source-frame box into the composite frame, corner by corner."""
    p1 = to_composite(PxPoint(b.x1, b.y1, frame=b.frame), dims, layout)
    p2 = to_composite(PxPoint(b.x2, b.y2, frame=b.frame), dims, layout)
    return PxBox(p1.x, p1.y, p2.x, p2.y, frame="composite")


def _check_composite_bounds(x: float, y: float, layout: CompositeLayout):
    if not (0 <= x <= layout.composite_w and 0 <= y <= layout.composite_h):
        raise OutOfRangeError(
            f"composite point ({x}, {y}) outside "
            f"{layout.composite_w}x{layout.composite_h}", x=x, y=y)


def normalize_point(p: PxPoint, layout: CompositeLayout = DEFAULT_LAYOUT) -> tuple[int, int]:
    """Scale a composite point onto the [0, 1000] grid (round half away, clamp)."""
    if p.frame != "composite":
        raise ValueError(f"expected a composite-frame point, got frame={p.frame!r}")
    _check_composite_bounds(p.x, p.y, layout)
    xn = round_half_away(p.x * layout.norm_scale / layout.composite_w)
    yn = round_half_away(p.y * layout.norm_scale / layout.composite_h)
    clamp = lambda v: max(0, min(layout.norm_scale, v))
    return clamp(xn), clamp(yn)


def normalize(b: PxBox, layout: CompositeLayout = DEFAULT_LAYOUT) -> NormBox:
    """Quantize a composite-frame box onto the [0, 1000] integer grid."""
    x1, y1 = normalize_point(PxPoint(b.x1, b.y1, frame=b.frame), layout)
    x2, y2 = normalize_point(PxPoint(b.x2, b.y2, frame=b.frame), layout)
    return NormBox(x1, y1, x2, y2)


def denormalize(b: NormBox, layout: CompositeLayout = DEFAULT_LAYOUT) -> PxBox:
    """Scaling inverse of :func:`normalize`; no rounding is applied."""
    sx = layout.composite_w / layout.norm_scale
    sy = layout.composite_h / layout.norm_scale
    return PxBox(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy, frame="composite")


def from_composite(p: PxPoint, layout: CompositeLayout = DEFAULT_LAYOUT,
                   dims_by_camera: Mapping[Camera, SourceDims] | None = None,
                   ) -> tuple[Camera, PxPoint]:
    """Identify the cell containing a composite point and invert the resize.

    Cell membership uses half-open intervals; the right/bottom composite
    edges fold into the last column/row. ``from_composite . to_composite``
    is the identity up to float rounding for points strictly inside a cell.
    """
    if p.frame != "composite":
        raise ValueError(f"expected a composite-frame point, got frame={p.frame!r}")
    _check_composite_bounds(p.x, p.y, layout)
    row, col = layout.cell_of(p.x, p.y)
    camera = layout.camera_at(row, col)
    if dims_by_camera is None:
        raise ValueError("dims_by_camera is required to invert the per-view resize")
    dims = dims_by_camera[camera]
    x = (p.x - col * layout.view_w) * dims.width / layout.view_w
    y = (p.y - row * layout.view_h) * dims.height / layout.view_h
    return camera, PxPoint(x, y, frame="source")
