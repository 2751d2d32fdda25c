"""Build the labeled 2x3 composite image and its tile decomposition.

Each camera view gets its orientation stamped in the top-left corner
(white bitmap text on a black strip), is resized to the 896x448 cell size
with a bilinear filter, and is pasted at its grid cell. The 2688x896
result is then cut into twelve 448x448 tiles on the exact grid (two per
view) plus a 448x448 thumbnail of the whole composite; with 256 tokens
per processed image that budgets 13 * 256 = 3328 tokens per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .cameras import Camera
from .fonts import render_text
from .geometry import DEFAULT_LAYOUT, CompositeLayout, SourceDims

TOKENS_PER_TILE = 256
TILE_SIZE = 448

LABEL_SCALE = 4      # 5x7 glyphs at x4 -> 28 px text on a ~36 px strip
LABEL_PAD = 4
LABEL_FG = (255, 255, 255)
LABEL_BG = (0, 0, 0)


class CompositionError(ValueError):
    pass


@dataclass(frozen=True)
class ViewImage:
    """One camera frame as an 8-bit RGB raster."""

    camera: Camera
    pixels: np.ndarray
    label_box: tuple[int, int, int, int] | None = None  # x1,y1,x2,y2; x2/y2 exclusive

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise CompositionError(
                f"{self.camera.value}: expected HxWx3 uint8 raster, got "
                f"shape {p.shape} dtype {p.dtype}")
        if p.shape[0] == 0 or p.shape[1] == 0:
            raise CompositionError(f"{self.camera.value}: empty raster")

    @property
    def dims(self) -> SourceDims:
        h, w = self.pixels.shape[:2]
        return SourceDims(self.camera, w, h)


@dataclass(frozen=True)
class CompositeImage:
    pixels: np.ndarray
    layout: CompositeLayout
    label_boxes: dict[Camera, tuple[int, int, int, int]] = field(default_factory=dict)

    def __post_init__(self):
        h, w = self.pixels.shape[:2]
        if (h, w) != (self.layout.composite_h, self.layout.composite_w):
            raise CompositionError(
                f"composite must be {self.layout.composite_w}x"
                f"{self.layout.composite_h}, got {w}x{h}")


@dataclass(frozen=True)
class TileSet:
    tiles: tuple[np.ndarray, ...]
    thumbnail: np.ndarray
    tokens_per_tile: int = TOKENS_PER_TILE


def _resize(arr: np.ndarray, width: int, height: int) -> np.ndarray:
    img = Image.fromarray(arr).resize((width, height), Image.Resampling.BILINEAR)
    return np.asarray(img)


def stamp_label(view: ViewImage) -> ViewImage:
    """Stamp the camera name onto a copy of the view.

    The text is opaque white on a solid black strip anchored at the
    top-left corner; pixels outside the strip are untouched, and stamping
    an already stamped view repaints the identical strip.
    """
    mask = render_text(view.camera.value, scale=LABEL_SCALE, tracking=1)
    strip_h = mask.shape[0] + 2 * LABEL_PAD
    strip_w = mask.shape[1] + 2 * LABEL_PAD
    h, w = view.pixels.shape[:2]
    strip_h = min(strip_h, h)
    strip_w = min(strip_w, w)

    pixels = view.pixels.copy()
    pixels[:strip_h, :strip_w] = LABEL_BG
    sub = mask[: max(strip_h - LABEL_PAD, 0), : max(strip_w - LABEL_PAD, 0)]
    pixels[LABEL_PAD:LABEL_PAD + sub.shape[0], LABEL_PAD:LABEL_PAD + sub.shape[1]][sub] = LABEL_FG
    return ViewImage(view.camera, pixels, label_box=(0, 0, strip_w, strip_h))


def compose(views, layout: CompositeLayout = DEFAULT_LAYOUT,
            label: bool = True) -> CompositeImage:
    """Assemble six camera views into the 2688x896 composite.

    Views are stamped (unless ``label`` is False), bilinearly resized to
    the cell size, and placed at their grid offsets. Exactly one view per
    camera is required.

    Raises:
        CompositionError: on a missing or duplicate camera.
    """
    by_camera: dict[Camera, ViewImage] = {}
    for v in views:
        if v.camera in by_camera:
            raise CompositionError(
                f"duplicate view for {v.camera.value}; cameras present: "
                + ", ".join(sorted(c.value for c in by_camera)))
        by_camera[v.camera] = v
    if set(by_camera) != set(Camera):
        raise CompositionError(
            "need exactly one view per camera; cameras present: "
            + (", ".join(sorted(c.value for c in by_camera)) or "none"))

    out = np.zeros((layout.composite_h, layout.composite_w, 3), dtype=np.uint8)
    label_boxes: dict[Camera, tuple[int, int, int, int]] = {}
    for camera, view in by_camera.items():
        stamped = stamp_label(view) if label else view
        cell = _resize(stamped.pixels, layout.view_w, layout.view_h)
        ox, oy = layout.cell_origin(camera)
        out[oy:oy + layout.view_h, ox:ox + layout.view_w] = cell
        if stamped.label_box is not None:
            h, w = view.pixels.shape[:2]
            sx = layout.view_w / w
            sy = layout.view_h / h
            x1, y1, x2, y2 = stamped.label_box
            label_boxes[camera] = (
                ox + math.floor(x1 * sx), oy + math.floor(y1 * sy),
                ox + math.ceil(x2 * sx), oy + math.ceil(y2 * sy),
            )
    return CompositeImage(out, layout, label_boxes)


def tile(composite: CompositeImage) -> TileSet:
    """Cut the composite into twelve 448x448 tiles plus a thumbnail.

    Tiles follow the exact 448-px grid in row-major order (six across the
    top row, then six across the bottom), so stitching them back yields
    the composite bit-for-bit. The thumbnail is the whole composite
    resized to 448x448.
    """
    pixels = composite.pixels
    h, w = pixels.shape[:2]
    if h % TILE_SIZE or w % TILE_SIZE:
        raise CompositionError(f"composite {w}x{h} does not sit on the {TILE_SIZE}-px grid")
    tiles = []
    for row in range(h // TILE_SIZE):
        for col in range(w // TILE_SIZE):
            y, x = row * TILE_SIZE, col * TILE_SIZE
            tiles.append(pixels[y:y + TILE_SIZE, x:x + TILE_SIZE].copy())
    thumbnail = _resize(pixels, TILE_SIZE, TILE_SIZE)
    return TileSet(tuple(tiles), thumbnail)


def stitch(tileset: TileSet, layout: CompositeLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """Reassemble tiles into the composite raster (inverse of :func:`tile`)."""
    cols = layout.composite_w // TILE_SIZE
    rows = layout.composite_h // TILE_SIZE
    if len(tileset.tiles) != rows * cols:
        raise CompositionError(f"expected {rows * cols} tiles, got {len(tileset.tiles)}")
    out = np.zeros((layout.composite_h, layout.composite_w, 3), dtype=np.uint8)
    for k, t in enumerate(tileset.tiles):
        row, col = divmod(k, cols)
        out[row * TILE_SIZE:(row + 1) * TILE_SIZE,
            col * TILE_SIZE:(col + 1) * TILE_SIZE] = t
    return out


def count_tokens(tileset: TileSet) -> int:
    """Token budget for a tile set: every tile plus the thumbnail."""
    return (len(tileset.tiles) + 1) * tileset.tokens_per_tile


def write_png(path: str | Path, pixels: np.ndarray) -> None:
    Image.fromarray(pixels).save(str(path), format="PNG")


def read_image(path: str | Path) -> np.ndarray:
    """Load an image file as an HxWx3 uint8 RGB array."""
    with Image.open(str(path)) as img:
        return np.asarray(img.convert("RGB"))


def save_tileset(tileset: TileSet, composite: CompositeImage,
                 out_dir: str | Path, sample_id: str) -> list[Path]:
    """Write composite, tiles, and thumbnail as PNGs; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{sample_id}.png"]
    write_png(paths[0], composite.pixels)
    for k, t in enumerate(tileset.tiles):
        p = out / f"{sample_id}_tile{k}.png"
        write_png(p, t)
        paths.append(p)
    thumb = out / f"{sample_id}_thumb.png"
    write_png(thumb, tileset.thumbnail)
    paths.append(thumb)
    return paths
