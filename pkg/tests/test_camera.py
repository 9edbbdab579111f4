"""Pinhole cameras and the orbit rig."""
from __future__ import annotations

import numpy as np
import pytest

from splatkit.camera import Camera, orbit_cameras
from splatkit.exceptions import InvalidParameterError


def test_look_at_projects_target_to_center(front_camera: Camera) -> None:
    point = front_camera.to_camera((0.0, 0.0, 0.0))
    np.testing.assert_allclose(point, [0.0, 0.0, 4.0], atol=1e-12)
    np.testing.assert_allclose(front_camera.center, [0.0, 0.0, 4.0], atol=1e-12)


def test_image_axes(front_camera: Camera) -> None:
    # x right, y down, z forward: world up is image up.
    up = front_camera.to_camera((0.0, 1.0, 0.0))
    assert up[1] < 0
    assert front_camera.shape == (32, 32)


def test_translated_camera_sees_moved_world(front_camera: Camera) -> None:
    offset = np.array([0.3, -0.2, 0.1])
    moved = front_camera.translated(offset)
    p = np.array([0.1, 0.2, 0.3])
    np.testing.assert_allclose(moved.to_camera(p + offset), front_camera.to_camera(p), atol=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"fx": 0.0},
        {"width": 0},
        {"rotation": np.diag([1.0, 1.0, 2.0])},
    ],
)
def test_invalid_cameras(kwargs: dict[str, object]) -> None:
    values = {
        "fx": 10.0,
        "fy": 10.0,
        "cx": 4.0,
        "cy": 4.0,
        "rotation": np.eye(3),
        "translation": np.zeros(3),
        "width": 8,
        "height": 8,
    }
    values.update(kwargs)
    with pytest.raises(InvalidParameterError):
        Camera(**values)  # type: ignore[arg-type]


def test_look_at_rejects_parallel_up() -> None:
    with pytest.raises(InvalidParameterError):
        Camera.look_at((0.0, 4.0, 0.0), (0.0, 0.0, 0.0), width=8, height=8)


def test_orbit_cameras_circle_the_origin() -> None:
    cameras = orbit_cameras(6, radius=4.0, width=16, height=12)
    assert [cam.pose_index for cam in cameras] == list(range(6))
    for cam in cameras:
        assert np.linalg.norm(cam.center[[0, 2]]) == pytest.approx(4.0)
        assert cam.to_camera((0.0, 0.0, 0.0))[2] > 0
        assert cam.shape == (12, 16)
    np.testing.assert_allclose(cameras[0].center, [0.0, 0.6, 4.0], atol=1e-12)
