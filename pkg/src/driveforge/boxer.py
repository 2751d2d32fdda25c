"""Center-point to bounding-box conversion via candidate segmentation masks.

A mask provider answers a point prompt with candidate masks (area, tight
box, optional RLE). The selection rule is always the same: take the
candidate with the largest pixel area. Selection never rejects a
candidate; instead, advisory flags mark results worth auditing:

* ``PROMPT_OUTSIDE_MASK`` -- the chosen mask does not contain the prompt
  point. This happens for thin structures such as traffic lights, where
  the nominal center falls between the lamp housing and the pole.
* ``SUSPECT_OVERSIZED``   -- the chosen mask covers more than 90% of the
  view, which usually means background leaked into the mask.
* ``SINGLE_CANDIDATE``    -- qualifies either warning above: the provider
  returned only one mask, so selection had no alternatives. A clean lone
  mask raises no flags at all.

Two providers are included: a synthetic one (luma threshold + connected
components) for desk-scale runs and tests, and a client for an external
segmentation sidecar speaking line-delimited JSON over stdin/stdout.
"""

from __future__ import annotations

import json
import math
import os
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .cameras import Camera
from .compositor import read_image
from .geometry import PxBox, PxPoint

FLAG_SUSPECT_OVERSIZED = "SUSPECT_OVERSIZED"
FLAG_PROMPT_OUTSIDE_MASK = "PROMPT_OUTSIDE_MASK"
FLAG_SINGLE_CANDIDATE = "SINGLE_CANDIDATE"

OVERSIZED_FRACTION = 0.9

SIDECAR_ENV_VAR = "DRIVEFORGE_SIDECAR_CMD"

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class NoCandidatesError(RuntimeError):
    """The provider returned no candidate masks for the prompt."""


class ProviderError(RuntimeError):
    """The mask provider failed (timeout, protocol error, or reported error)."""


@dataclass(frozen=True)
class MaskCandidate:
    """One candidate mask, summarized.

    ``bbox`` is the tight box of the mask in source pixels with x2/y2
    exclusive. ``rle`` (optional) encodes the full-image binary mask in
    row-major order as alternating run lengths, starting with the count
    of zeros; runs sum to height*width.
    """

    area_px: int
    bbox: PxBox
    contains_prompt: bool
    rle: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.area_px < 1:
            raise ValueError(f"candidate area must be >= 1, got {self.area_px}")


@dataclass(frozen=True)
class BoxResult:
    bbox: PxBox
    chosen_index: int
    flags: frozenset[str]


def rle_encode(mask: np.ndarray) -> tuple[int, ...]:
    """Encode a binary mask as row-major alternating runs, zeros first."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return ()
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return tuple(int(r) for r in runs)


def rle_decode(rle, height: int, width: int) -> np.ndarray:
    """Inverse of :func:`rle_encode` for a height*width mask."""
    total = sum(rle)
    if total != height * width:
        raise ValueError(f"RLE sums to {total}, expected {height * width}")
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for run in rle:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    return flat.reshape(height, width)


def select_largest(cands: list[MaskCandidate]) -> BoxResult:
    """Pick the candidate with the greatest pixel area.

    Ties break toward the lowest index. Flags are advisory only; the
    largest mask is returned regardless.

    Raises:
        NoCandidatesError: on an empty candidate list.
    """
    if not cands:
        raise NoCandidatesError("no candidate masks to select from")
    best = 0
    for i, c in enumerate(cands):
        if c.area_px > cands[best].area_px:
            best = i
    flags = set()
    if not cands[best].contains_prompt:
        flags.add(FLAG_PROMPT_OUTSIDE_MASK)
        if len(cands) == 1:
            flags.add(FLAG_SINGLE_CANDIDATE)
    return BoxResult(bbox=cands[best].bbox, chosen_index=best, flags=frozenset(flags))


def center_to_box(point: PxPoint, camera: Camera, image, provider,
                  view_area: int | None = None,
                  oversized_fraction: float = OVERSIZED_FRACTION) -> BoxResult:
    """Convert an object's center point to a box via the provider's masks.

    ``image`` is whatever reference the provider understands (an array for
    the synthetic provider, a file path for the sidecar). ``view_area``
    (width*height of the source view) enables the oversize check; when
    omitted it is read from the image itself if possible.
    """
    try:
        cands = provider.candidates(image, (point.x, point.y))
    except ProviderError as e:
        raise ProviderError(f"sample {image}: {e}") from e
    result = select_largest(cands)
    if view_area is None:
        view_area = _infer_area(image)
    flags = set(result.flags)
    if view_area is not None:
        if cands[result.chosen_index].area_px > oversized_fraction * view_area:
            flags.add(FLAG_SUSPECT_OVERSIZED)
            if len(cands) == 1:
                flags.add(FLAG_SINGLE_CANDIDATE)
    if flags != result.flags:
        result = BoxResult(result.bbox, result.chosen_index, frozenset(flags))
    return result


def _infer_area(image) -> int | None:
    if isinstance(image, np.ndarray):
        return int(image.shape[0] * image.shape[1])
    if isinstance(image, (str, Path)):
        from PIL import Image
        with Image.open(str(image)) as img:
            w, h = img.size
        return w * h
    return None


class SyntheticProvider:
    """Desk-scale mask provider: luma threshold + 4-connected components.

    Pixels with Rec.601 luma above the threshold are foreground. The
    candidate list is the component containing the prompt pixel (when the
    prompt lands on foreground) followed by the ``neighbors`` nearest
    other components by centroid distance to the prompt, mimicking a
    multi-mask point prompt. May return an empty list.
    """

    def __init__(self, neighbors: int = 2, luma_threshold: int = 127,
                 want_rle: bool = True):
        self.neighbors = neighbors
        self.luma_threshold = luma_threshold
        self.want_rle = want_rle

    def candidates(self, image, point) -> list[MaskCandidate]:
        arr = read_image(image) if isinstance(image, (str, Path)) else np.asarray(image)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise ProviderError(f"expected 8-bit RGB image, got {arr.shape} {arr.dtype}")
        h, w = arr.shape[:2]
        x, y = point
        px = min(max(int(math.floor(x)), 0), w - 1)
        py = min(max(int(math.floor(y)), 0), h - 1)

        luma = (299 * arr[:, :, 0].astype(np.uint32)
                + 587 * arr[:, :, 1].astype(np.uint32)
                + 114 * arr[:, :, 2].astype(np.uint32)) // 1000
        binary = luma > self.luma_threshold
        labels, count = ndimage.label(binary, structure=_FOUR_CONNECTED)
        if count == 0:
            return []

        point_label = int(labels[py, px])
        areas = np.bincount(labels.ravel(), minlength=count + 1)
        centroids = ndimage.center_of_mass(binary, labels, range(1, count + 1))
        slices = ndimage.find_objects(labels)

        def make_candidate(lab: int) -> MaskCandidate:
            sl = slices[lab - 1]
            bbox = PxBox(float(sl[1].start), float(sl[0].start),
                         float(sl[1].stop), float(sl[0].stop), frame="source")
            rle = rle_encode(labels == lab) if self.want_rle else None
            return MaskCandidate(
                area_px=int(areas[lab]),
                bbox=bbox,
                contains_prompt=lab == point_label,
                rle=rle,
            )

        ordered: list[int] = []
        if point_label != 0:
            ordered.append(point_label)
        others = [lab for lab in range(1, count + 1) if lab != point_label]
        others.sort(key=lambda lab: (math.hypot(centroids[lab - 1][1] - x,
                                                centroids[lab - 1][0] - y), lab))
        ordered.extend(others[: self.neighbors])
        return [make_candidate(lab) for lab in ordered]

    def close(self):
        pass


class SidecarProvider:
    """Client for a segmentation sidecar over line-delimited JSON.

    One JSON object per line on the child's stdin/stdout. Request:
    ``{"id", "image", "point": [x, y], "want_rle"}``; response:
    ``{"id", "candidates": [...]}`` or ``{"id", "error"}``. Responses may
    arrive out of order and are matched by id. Each provider instance
    owns its child process exclusively; the pipeline opens one per worker.
    """

    def __init__(self, command: list[str] | str, timeout: float = 60.0,
                 want_rle: bool = False):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = command
        self.timeout = timeout
        self.want_rle = want_rle
        self._counter = 0
        self._pending: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._arrived = threading.Condition(self._lock)
        try:
            self._proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, text=True, bufsize=1)
        except OSError as e:
            raise ProviderError(f"cannot start sidecar {command!r}: {e}") from e
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    @classmethod
    def from_env(cls, **kwargs) -> "SidecarProvider":
        cmd = os.environ.get(SIDECAR_ENV_VAR)
        if not cmd:
            raise ProviderError(f"no sidecar command given and {SIDECAR_ENV_VAR} unset")
        return cls(cmd, **kwargs)

    def _read_loop(self):
        for line in self._proc.stdout:
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                continue  # not ours to crash on; the waiter will time out
            with self._arrived:
                self._pending[str(msg.get("id"))] = msg
                self._arrived.notify_all()
        with self._arrived:
            self._pending["__eof__"] = {}
            self._arrived.notify_all()

    def candidates(self, image, point) -> list[MaskCandidate]:
        self._counter += 1
        rid = f"r{self._counter}"
        request = {"id": rid, "image": str(image),
                   "point": [float(point[0]), float(point[1])],
                   "want_rle": self.want_rle}
        try:
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError) as e:
            raise ProviderError(f"sidecar write failed for {rid}: {e}") from e

        deadline = threading.TIMEOUT_MAX if self.timeout is None else self.timeout
        with self._arrived:
            ok = self._arrived.wait_for(
                lambda: rid in self._pending or "__eof__" in self._pending,
                timeout=deadline)
            if rid not in self._pending:
                if not ok:
                    raise ProviderError(f"sidecar timed out after {self.timeout}s on {rid}")
                raise ProviderError(f"sidecar exited before answering {rid}")
            msg = self._pending.pop(rid)
        if "error" in msg:
            raise ProviderError(f"sidecar error for {rid}: {msg['error']}")
        try:
            return [self._parse_candidate(c) for c in msg["candidates"]]
        except (KeyError, TypeError, IndexError) as e:
            raise ProviderError(f"malformed sidecar response for {rid}: {e}") from e

    @staticmethod
    def _parse_candidate(c: dict) -> MaskCandidate:
        x1, y1, x2, y2 = c["bbox"]
        return MaskCandidate(
            area_px=int(c["area"]),
            bbox=PxBox(float(x1), float(y1), float(x2), float(y2), frame="source"),
            contains_prompt=bool(c["contains_prompt"]),
            rle=tuple(int(r) for r in c["rle"]) if c.get("rle") is not None else None,
        )

    def close(self):
        if self._proc.stdin and not self._proc.stdin.closed:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
