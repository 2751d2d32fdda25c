"""Parser and serializer for inline key-object tags.

Question/answer strings reference scene objects with inline tags of the
form ``<c1,CAM_BACK,1088.3,497.5>``: an object id, a camera name, and
either a center point (two coordinates) or a box (four coordinates).
Arity disambiguates the two forms. Box tags whose four coordinates are
all bare integers in [0, 1000] are read as normalized composite-grid
boxes; any other box tag is read as source-frame pixels. Center and
pixel-box coordinates serialize with exactly one decimal place,
normalized boxes as bare integers, so the distinction survives a
parse/serialize round trip.

The grammar is strict: no whitespace inside a tag, ids are ``c`` followed
by digits, and the camera must be one of the six known names. A ``<c``
opener that fails to parse is an error, not plain text, so corrupt data
surfaces early.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping

from .cameras import CAMERA_NAMES, Camera
from .geometry import NORM_SCALE, NormBox, PxBox, PxPoint

TagForm = Literal["center", "box_px", "box_norm"]

# A candidate tag: "<c" + digits + "," + anything up to the closing ">".
# Candidates are then strictly validated; failures are parse errors.
_CANDIDATE_RE = re.compile(r"<c\d+,[^<>]*>")
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")
_BARE_INT_RE = re.compile(r"\d+")


class TagError(ValueError):
    """Base class for tag grammar errors."""


class TagParseError(TagError):
    """A candidate tag failed validation.

    Attributes:
        span: (start, end) character offsets of the offending candidate.
        text: the offending substring.
    """

    def __init__(self, reason: str, span: tuple[int, int], text: str):
        super().__init__(f"bad key-object tag at {span[0]}..{span[1]} ({text!r}): {reason}")
        self.reason = reason
        self.span = span
        self.text = text


class ConversionUnavailableError(TagError):
    """The requested serialization form is not derivable from the tag."""


class RewriteError(TagError):
    """A rewrite mapping did not cover every tagged object id."""

    def __init__(self, missing: Iterable[str]):
        self.missing = sorted(set(missing))
        super().__init__("rewrite mapping missing object ids: " + ", ".join(self.missing))


@dataclass(frozen=True)
class KeyObjectTag:
    """One parsed ``<id,camera,...>`` reference."""

    object_id: str
    camera: Camera
    geometry: PxPoint | PxBox | NormBox
    span: tuple[int, int] = field(default=(0, 0), compare=False)

    def __post_init__(self):
        if not re.fullmatch(r"c\d+", self.object_id):
            raise ValueError(f"object id must be 'c' + digits, got {self.object_id!r}")

    @property
    def form(self) -> TagForm:
        if isinstance(self.geometry, PxPoint):
            return "center"
        if isinstance(self.geometry, NormBox):
            return "box_norm"
        return "box_px"


@dataclass(frozen=True)
class TaggedText:
    """A host string plus its extracted tags.

    ``template`` shows the raw text with each tag replaced by ``{tagK}``;
    :meth:`reconstruct` splices serialized tags back by span, which is
    byte-exact for any input.
    """

    raw: str
    tags: tuple[KeyObjectTag, ...]

    @property
    def template(self) -> str:
        parts = []
        cursor = 0
        for k, tag in enumerate(self.tags):
            start, end = tag.span
            parts.append(self.raw[cursor:start])
            parts.append("{tag%d}" % k)
            cursor = end
        parts.append(self.raw[cursor:])
        return "".join(parts)

    def reconstruct(self, tags: Iterable[KeyObjectTag] | None = None) -> str:
        """Splice (serialized) tags back into the non-tag text by span."""
        tags = self.tags if tags is None else tuple(tags)
        if len(tags) != len(self.tags):
            raise ValueError(f"expected {len(self.tags)} tags, got {len(tags)}")
        parts = []
        cursor = 0
        for original, replacement in zip(self.tags, tags):
            start, end = original.span
            parts.append(self.raw[cursor:start])
            parts.append(serialize_tag(replacement))
            cursor = end
        parts.append(self.raw[cursor:])
        return "".join(parts)


def _parse_candidate(text: str, span: tuple[int, int]) -> KeyObjectTag:
    inner = text[1:-1]
    if any(ch.isspace() for ch in inner):
        raise TagParseError("whitespace inside tag", span, text)
    fields = inner.split(",")
    if len(fields) not in (4, 6):
        raise TagParseError(
            f"expected 4 fields (center) or 6 fields (box), got {len(fields)}",
            span, text)
    object_id, camera_name = fields[0], fields[1]
    if camera_name not in CAMERA_NAMES:
        raise TagParseError(f"unknown camera {camera_name!r}", span, text)
    camera = Camera(camera_name)
    coords = fields[2:]
    for c in coords:
        if not _NUMBER_RE.fullmatch(c):
            raise TagParseError(f"non-numeric coordinate {c!r}", span, text)
    values = [float(c) for c in coords]
    if len(values) == 2:
        geometry: PxPoint | PxBox | NormBox = PxPoint(values[0], values[1], frame="source")
    else:
        x1, y1, x2, y2 = values
        if x1 > x2 or y1 > y2:
            raise TagParseError("box corners out of order", span, text)
        bare_ints = all(_BARE_INT_RE.fullmatch(c) for c in coords)
        if bare_ints and all(0 <= v <= NORM_SCALE for v in values):
            geometry = NormBox(int(x1), int(y1), int(x2), int(y2))
        else:
            geometry = PxBox(x1, y1, x2, y2, frame="source")
    return KeyObjectTag(object_id, camera, geometry, span=span)


def parse_tags(text: str) -> TaggedText:
    """Extract every key-object tag from ``text``, left to right.

    Text without tags is returned unchanged with an empty tag tuple.

    Raises:
        TagParseError: on a malformed candidate (wrong arity, unknown
            camera, non-numeric coordinate, embedded whitespace), naming
            the offending span.
    """
    tags = []
    for m in _CANDIDATE_RE.finditer(text):
        tags.append(_parse_candidate(m.group(0), m.span()))
    return TaggedText(raw=text, tags=tuple(tags))


def parse_tags_lenient(text: str) -> TaggedText:
    """Like :func:`parse_tags`, but malformed candidates are skipped.

    Model output is not trusted to honor the grammar; scoring code uses
    this to extract whatever well-formed tags are present.
    """
    tags = []
    for m in _CANDIDATE_RE.finditer(text):
        try:
            tags.append(_parse_candidate(m.group(0), m.span()))
        except TagParseError:
            continue
    return TaggedText(raw=text, tags=tuple(tags))


def serialize_tag(tag: KeyObjectTag, form: TagForm | None = None) -> str:
    """Render a tag back to its inline string form.

    ``form`` defaults to the tag's own geometry form. Requesting any other
    form raises :class:`ConversionUnavailableError`: geometric conversions
    (center to box, pixel to normalized) are pipeline operations, not
    serialization options.
    """
    if form is None:
        form = tag.form
    if form != tag.form:
        raise ConversionUnavailableError(
            f"tag {tag.object_id} has {tag.form} geometry; cannot serialize as {form}")
    g = tag.geometry
    head = f"<{tag.object_id},{tag.camera.value}"
    if isinstance(g, PxPoint):
        return f"{head},{g.x:.1f},{g.y:.1f}>"
    if isinstance(g, NormBox):
        return f"{head},{g.x1},{g.y1},{g.x2},{g.y2}>"
    return f"{head},{g.x1:.1f},{g.y1:.1f},{g.x2:.1f},{g.y2:.1f}>"


def rewrite_tags(tagged: TaggedText, mapping: Mapping[str, KeyObjectTag]) -> str:
    """Replace each tag in place with the mapped tag's serialization.

    Raises:
        RewriteError: if any tagged object id is absent from ``mapping``.
    """
    missing = [t.object_id for t in tagged.tags if t.object_id not in mapping]
    if missing:
        raise RewriteError(missing)
    return tagged.reconstruct(mapping[t.object_id] for t in tagged.tags)
