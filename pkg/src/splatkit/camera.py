"""Pinhole cameras.

Cameras look down their +z axis with x to the right and y down. Pixel ``(x, y)``
is sampled at the integer coordinate ``(x, y)``, so the principal point lands on
pixel ``(cx, cy)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .exceptions import InvalidParameterError

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    FloatArray = NDArray[np.float64]

ORTHONORMAL_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class Camera:
    """Intrinsics, world-to-camera extrinsics, resolution and pose index."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: FloatArray
    translation: FloatArray
    width: int
    height: int
    pose_index: int = 0

    def __post_init__(self) -> None:  # noqa: D105
        if self.fx <= 0 or self.fy <= 0:
            msg = f"Focal lengths must be > 0, got fx={self.fx}, fy={self.fy}."
            raise InvalidParameterError(msg)
        if self.width <= 0 or self.height <= 0:
            msg = f"Resolution must be positive, got {self.width}x{self.height}."
            raise InvalidParameterError(msg)
        rotation = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.max(np.abs(rotation @ rotation.T - np.eye(3))) > ORTHONORMAL_TOLERANCE:
            msg = "Camera rotation is not orthonormal."
            raise InvalidParameterError(msg)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @property
    def shape(self) -> tuple[int, int]:
        """``(height, width)`` of the images this camera produces."""
        return self.height, self.width

    @property
    def center(self) -> FloatArray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points: ArrayLike) -> FloatArray:
        """World points ``(..., 3)`` to camera coordinates."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def translated(self, offset: ArrayLike) -> Camera:
        """The same camera after moving the world by ``offset``."""
        translation = self.translation - self.rotation @ np.asarray(offset, dtype=np.float64)
        return Camera(self.fx, self.fy, self.cx, self.cy, self.rotation, translation, self.width, self.height, self.pose_index)

    @classmethod
    def look_at(  # noqa: PLR0913
        cls,
        eye: ArrayLike,
        target: ArrayLike,
        *,
        up: ArrayLike = (0.0, 1.0, 0.0),
        width: int,
        height: int,
        fov_degrees: float = 40.0,
        pose_index: int = 0,
    ) -> Camera:
        """Camera at ``eye`` looking at ``target`` with world ``up`` towards the top of the image."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-12:
            msg = "Camera up vector is parallel to the viewing direction."
            raise InvalidParameterError(msg)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward])
        focal = 0.5 * width / np.tan(np.deg2rad(fov_degrees) / 2)
        return cls(
            fx=float(focal),
            fy=float(focal),
            cx=(width - 1) / 2,
            cy=(height - 1) / 2,
            rotation=rotation,
            translation=-rotation @ eye,
            width=width,
            height=height,
            pose_index=pose_index,
        )


def orbit_cameras(  # noqa: PLR0913
    count: int,
    *,
    radius: float,
    width: int,
    height: int,
    elevation: float = 0.15,
    fov_degrees: float = 40.0,
) -> list[Camera]:
    """``count`` cameras on a horizontal circle around the origin, ordered by angle.

    The circular ordering defines the scalar pose coordinate: camera ``j`` has
    ``pose_index == j``.
    """
    cameras = []
    for j in range(count):
        angle = 2 * np.pi * j / count
        eye = radius * np.array([np.sin(angle), elevation, np.cos(angle)])
        cameras.append(Camera.look_at(eye, (0.0, 0.0, 0.0), width=width, height=height, fov_degrees=fov_degrees, pose_index=j))
    return cameras


__all__ = ["Camera", "orbit_cameras"]
