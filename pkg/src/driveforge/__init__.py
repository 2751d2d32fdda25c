"""driveforge: multi-view driving VQA dataset conversion and evaluation."""

from .cameras import Camera
from .geometry import (CompositeLayout, DEFAULT_LAYOUT, NormBox, PxBox, PxPoint,
                       SourceDims, box_to_composite, denormalize, from_composite,
                       normalize, to_composite)
from .tags import (KeyObjectTag, TaggedText, parse_tags, parse_tags_lenient,
                   rewrite_tags, serialize_tag)

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "CompositeLayout",
    "DEFAULT_LAYOUT",
    "KeyObjectTag",
    "NormBox",
    "PxBox",
    "PxPoint",
    "SourceDims",
    "TaggedText",
    "box_to_composite",
    "denormalize",
    "from_composite",
    "normalize",
    "parse_tags",
    "parse_tags_lenient",
    "rewrite_tags",
    "serialize_tag",
    "to_composite",
]
