"""Camera identifiers for the six-view surround rig."""

from __future__ import annotations

import enum


class Camera(str, enum.Enum):
    """The six surround cameras, in composite grid order (row-major)."""

    FRONT_LEFT = "CAM_FRONT_LEFT"
    FRONT = "CAM_FRONT"
    FRONT_RIGHT = "CAM_FRONT_RIGHT"
    BACK_LEFT = "CAM_BACK_LEFT"
    BACK = "CAM_BACK"
    BACK_RIGHT = "CAM_BACK_RIGHT"

    @classmethod
    def from_name(cls, name: str) -> "Camera":
        """Resolve a camera from its full name, e.g. ``"CAM_FRONT"``.

        Raises:
            UnknownCameraError: if ``name`` is not one of the six cameras.
        """
        try:
            return cls(name)
        except ValueError:
            raise UnknownCameraError(name) from None

    @property
    def short_name(self) -> str:
        """Name without the ``CAM_`` prefix, e.g. ``"FRONT_LEFT"``."""
        return self.value[len("CAM_"):]


class UnknownCameraError(ValueError):
    def __init__(self, name: str):
        super().__init__(
            f"unknown camera {name!r}; expected one of "
            + ", ".join(c.value for c in Camera)
        )
        self.name = name


CAMERA_NAMES = tuple(c.value for c in Camera)
