"""Mesh binding, posing and reenactment."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from splatkit import quaternion
from splatkit.camera import orbit_cameras
from splatkit.exceptions import BindingError, DegenerateGeometryError, MeshError
from splatkit.rig import (
    MeshFrame,
    bind_splats,
    closest_barycentric,
    decouple,
    pose_splats,
    reenact,
    triangle_frame,
)
from splatkit.synthetic import icosphere
from tests.conftest import random_scene


def _same_rotation(a: np.ndarray, b: np.ndarray) -> None:
    np.testing.assert_allclose(quaternion.to_matrix(a), quaternion.to_matrix(b), atol=1e-9)


def test_mesh_rejects_out_of_range_triangles() -> None:
    with pytest.raises(MeshError):
        MeshFrame(np.zeros((3, 3)), [[0, 1, 3]])


def test_degenerate_triangle_is_reported() -> None:
    mesh = MeshFrame([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], [[0, 1, 2]])
    with pytest.raises(DegenerateGeometryError):
        mesh.validate()


def test_triangle_frame_of_unit_square(triangle_mesh: MeshFrame) -> None:
    origin, rotation, scale = triangle_frame(triangle_mesh, 0)
    np.testing.assert_allclose(origin, [2 / 3, 1 / 3, 0.0])
    np.testing.assert_allclose(rotation[:, 2], [0.0, 0.0, 1.0])
    np.testing.assert_allclose(rotation.T @ rotation, np.eye(3), atol=1e-12)
    assert scale == pytest.approx(np.sqrt(0.5))
    with pytest.raises(MeshError):
        triangle_frame(triangle_mesh, 2)


def test_closest_barycentric_projects_onto_triangle() -> None:
    a, b, c = np.array([0.0, 0, 0]), np.array([1.0, 0, 0]), np.array([0.0, 1, 0])
    np.testing.assert_allclose(closest_barycentric([0.25, 0.25, 0.7], a, b, c), [0.5, 0.25, 0.25])
    np.testing.assert_allclose(closest_barycentric([-1.0, -1.0, 0.0], a, b, c), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(closest_barycentric([1.0, 1.0, 0.0], a, b, c), [0.0, 0.5, 0.5])


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_pose_on_binding_mesh_is_identity(seed: int) -> None:
    rng = np.random.default_rng(seed)
    mesh = icosphere(1)
    scene = random_scene(rng, 20, spread=1.2)
    bound = bind_splats(scene, mesh)
    posed = pose_splats(bound, mesh)
    np.testing.assert_allclose(posed.mu, scene.mu, atol=1e-9)
    _same_rotation(posed.q, scene.q)
    np.testing.assert_allclose(posed.s, scene.s, atol=1e-9)
    np.testing.assert_array_equal(bound.rest_offset, bound.offset)


@settings(max_examples=15, deadline=None)
@given(
    st.integers(min_value=0, max_value=2**32 - 1),
    st.floats(min_value=0.5, max_value=2.0),
)
def test_posing_follows_similarity_transforms(seed: int, scale: float) -> None:
    rng = np.random.default_rng(seed)
    mesh = icosphere(1)
    bound = bind_splats(random_scene(rng, 12, spread=1.0), mesh)
    rotation = Rotation.random(random_state=seed % (2**31)).as_matrix()
    translation = rng.uniform(-2.0, 2.0, size=3)
    moved = pose_splats(bound, mesh.transformed(rotation, translation, scale))
    rest = pose_splats(bound, mesh)
    np.testing.assert_allclose(moved.mu, scale * rest.mu @ rotation.T + translation, atol=1e-9)
    np.testing.assert_allclose(moved.s, scale * rest.s, atol=1e-9)
    expected_q = quaternion.multiply(quaternion.from_matrix(rotation), rest.q)
    _same_rotation(moved.q, expected_q)


def test_free_splats_ignore_the_mesh(triangle_mesh: MeshFrame) -> None:
    scene = random_scene(np.random.default_rng(0), 4)
    moved = triangle_mesh.transformed(translation=(1.0, 2.0, 3.0))
    np.testing.assert_array_equal(pose_splats(scene, moved).mu, scene.mu)


def test_decoupled_splats_freeze_their_world_values() -> None:
    mesh = icosphere(1)
    bound = bind_splats(random_scene(np.random.default_rng(1), 6, spread=1.0), mesh)
    shifted = mesh.transformed(translation=(0.5, 0.0, 0.0))
    released = decouple(bound, [0, 2], shifted)
    assert released.decoupled.tolist() == [True, False, True, False, False, False]
    assert not released.posable[0]
    far = pose_splats(released, mesh.transformed(translation=(3.0, 0.0, 0.0)))
    np.testing.assert_allclose(far.mu[0], pose_splats(bound, shifted).mu[0], atol=1e-12)
    np.testing.assert_allclose(far.mu[1], pose_splats(bound, mesh).mu[1] + [3.0, 0.0, 0.0], atol=1e-9)


def test_binding_beyond_mesh_is_rejected(triangle_mesh: MeshFrame) -> None:
    bound = bind_splats(random_scene(np.random.default_rng(2), 30, spread=1.0), icosphere(0))
    assert bound.triangle.max() >= len(triangle_mesh)
    with pytest.raises(BindingError):
        pose_splats(bound, triangle_mesh)


def test_reenact_renders_every_frame_and_camera() -> None:
    mesh = icosphere(0)
    bound = bind_splats(random_scene(np.random.default_rng(3), 10, spread=0.8), mesh)
    meshes = [mesh, mesh.transformed(translation=(0.0, 0.1, 0.0))]
    cameras = orbit_cameras(2, radius=4.0, width=12, height=10)
    outputs = reenact(bound, meshes, cameras)
    assert len(outputs) == 2
    assert all(len(row) == 2 for row in outputs)
    assert outputs[1][0].color.shape == (10, 12, 3)
