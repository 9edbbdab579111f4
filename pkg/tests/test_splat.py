"""Splat records, covariances and the flat parameter layout."""
from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splatkit import quaternion
from splatkit.exceptions import DegenerateCovarianceError, InvalidParameterError, LayoutError
from splatkit.rig import bind_splats
from splatkit.splat import (
    LAYOUT,
    Covariance3,
    GaussianSplat,
    ParamVector,
    Scene,
    covariance_from_params,
    gaussian_eval,
    pack_params,
    unpack_params,
)
from tests.conftest import random_scene

if TYPE_CHECKING:
    from splatkit.rig import MeshFrame


def _splat(**overrides: object) -> GaussianSplat:
    values = {
        "mu": (0.0, 0.0, 0.0),
        "q": (1.0, 0.0, 0.0, 0.0),
        "s": (0.1, 0.2, 0.3),
        "opacity": 0.5,
        "color": (0.2, 0.4, 0.6),
        "label": 1,
    }
    values.update(overrides)
    return GaussianSplat(**values)  # type: ignore[arg-type]


@pytest.mark.parametrize(
    "overrides",
    [
        {"q": (1.0, 1.0, 0.0, 0.0)},
        {"s": (0.1, 0.0, 0.3)},
        {"opacity": 1.5},
        {"color": (0.2, -0.1, 0.3)},
        {"label": -1},
    ],
)
def test_invalid_splats_are_rejected(overrides: dict[str, object]) -> None:
    with pytest.raises(InvalidParameterError):
        _splat(**overrides)


def test_near_unit_quaternion_is_normalised() -> None:
    splat = _splat(q=(1.0 + 5e-7, 0.0, 0.0, 0.0))
    assert np.linalg.norm(splat.q) == pytest.approx(1.0, abs=1e-15)


def test_covariance_is_rotated_diagonal() -> None:
    q = quaternion.about_axis((0.0, 0.0, 1.0), 0.4)
    sigma = covariance_from_params(q, (0.1, 0.2, 0.3)).sigma
    r = quaternion.to_matrix(q)
    np.testing.assert_allclose(sigma, r @ np.diag([0.01, 0.04, 0.09]) @ r.T, atol=1e-15)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(sigma)), [0.01, 0.04, 0.09], atol=1e-12)


def test_covariance_rejects_indefinite_matrix() -> None:
    with pytest.raises(InvalidParameterError):
        Covariance3(np.diag([1.0, -1.0, 1.0]))


def test_gaussian_eval_peak_and_falloff() -> None:
    sigma = Covariance3(np.eye(3) * 0.25)
    assert gaussian_eval((0, 0, 0), sigma, (0, 0, 0)) == pytest.approx(1.0)
    assert gaussian_eval((0, 0, 0), sigma, (0.5, 0, 0)) == pytest.approx(np.exp(-0.5))


def test_gaussian_eval_rejects_ill_conditioned_covariance() -> None:
    with pytest.raises(DegenerateCovarianceError):
        gaussian_eval((0, 0, 0), Covariance3(np.diag([1.0, 1.0, 1e-13])), (0, 0, 0))


def test_scene_round_trips_through_splats() -> None:
    scene = random_scene(np.random.default_rng(0), 5, label=2)
    rebuilt = Scene.from_splats(list(scene))
    for name, column in scene.columns().items():
        np.testing.assert_allclose(getattr(rebuilt, name), column, err_msg=name)


def test_scene_take_and_concat() -> None:
    scene = random_scene(np.random.default_rng(1), 6)
    head, tail = scene.take([0, 1, 2]), scene.take([3, 4, 5])
    joined = head.concat(tail)
    np.testing.assert_array_equal(joined.mu, scene.mu)
    assert len(Scene.empty()) == 0


def test_scene_column_length_mismatch() -> None:
    with pytest.raises(LayoutError):
        Scene.from_arrays(
            mu=np.zeros((2, 3)), q=np.tile(quaternion.IDENTITY, (3, 1)), s=np.ones((3, 3)),
            opacity=np.ones(3), color=np.zeros((3, 3)),
        )


def test_layout_has_fourteen_slots() -> None:
    assert LAYOUT.width == 14
    assert LAYOUT.slot("mu") == slice(0, 3)
    assert LAYOUT.slot("q") == slice(3, 7)
    assert LAYOUT.slot("log_s") == slice(7, 10)
    assert LAYOUT.slot("logit_opacity") == slice(10, 11)
    assert LAYOUT.slot("color") == slice(11, 14)


@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=1, max_value=8))
def test_pack_unpack_restores_free_splats(seed: int, count: int) -> None:
    scene = random_scene(np.random.default_rng(seed), count)
    vector = pack_params(scene)
    assert len(vector) == LAYOUT.width * count
    unpacked = unpack_params(vector)
    assert not unpacked.clamped
    np.testing.assert_allclose(unpacked.scene.mu, scene.mu, atol=1e-12)
    np.testing.assert_allclose(unpacked.scene.q, scene.q, atol=1e-12)
    np.testing.assert_allclose(unpacked.scene.s, scene.s, rtol=1e-12)
    assert np.array_equal(unpacked.scene.opacity, scene.opacity)
    np.testing.assert_allclose(unpacked.scene.color, scene.color)


def _assert_same_scene(actual: Scene, expected: Scene) -> None:
    for name in Scene._shapes:
        assert np.array_equal(getattr(actual, name), getattr(expected, name)), name


def test_pack_unpack_is_exact_at_opacity_endpoints() -> None:
    scene = random_scene(np.random.default_rng(11), 50)
    opacity = scene.opacity.copy()
    opacity[:2] = [0.0, 1.0]
    scene = scene.replace(opacity=opacity)
    unpacked = unpack_params(pack_params(scene))
    assert not unpacked.clamped
    _assert_same_scene(unpacked.scene, scene)


def test_pack_unpack_is_exact_for_bound_splats(triangle_mesh: MeshFrame) -> None:
    scene = Scene.from_arrays(
        mu=[[0.6, 0.3, 0.05], [0.2, 0.7, -0.02]],
        q=[quaternion.IDENTITY, quaternion.IDENTITY],
        s=[[0.05, 0.05, 0.02], [0.03, 0.04, 0.05]],
        opacity=[1.0, 0.0],
        color=[[0.5, 0.5, 0.5], [1.0, 0.0, 0.2]],
    )
    bound = bind_splats(scene, triangle_mesh)
    _assert_same_scene(unpack_params(pack_params(bound)).scene, bound)


def test_unpack_moves_only_perturbed_coordinates() -> None:
    scene = random_scene(np.random.default_rng(4), 4).replace(opacity=[0.0, 1.0, 0.5, 0.5])
    blocks = pack_params(scene).blocks().copy()
    blocks[0, LAYOUT.slot("logit_opacity")] = 0.0
    blocks[2, LAYOUT.slot("log_s")] += 0.1
    unpacked = unpack_params(ParamVector(blocks.reshape(-1), scene)).scene
    assert unpacked.opacity[0] == pytest.approx(0.5)
    assert unpacked.opacity[1] == 1.0
    np.testing.assert_allclose(unpacked.s[2], scene.s[2] * np.exp(0.1))
    assert np.array_equal(unpacked.s[3], scene.s[3])


def test_unpack_clamps_color_and_normalises_quaternion() -> None:
    scene = random_scene(np.random.default_rng(2), 3)
    blocks = pack_params(scene).blocks().copy()
    blocks[0, LAYOUT.slot("color")] = [1.4, -0.2, 0.5]
    blocks[1, LAYOUT.slot("q")] *= 3.0
    unpacked = unpack_params(ParamVector(blocks.reshape(-1), scene))
    assert unpacked.clamped
    np.testing.assert_allclose(unpacked.scene.color[0], [1.0, 0.0, 0.5])
    np.testing.assert_allclose(np.linalg.norm(unpacked.scene.q, axis=1), 1.0)


def test_posable_splats_pack_their_local_parameters(triangle_mesh) -> None:
    scene = Scene.from_arrays(
        mu=[[0.6, 0.3, 0.05]],
        q=[quaternion.IDENTITY],
        s=[[0.05, 0.05, 0.02]],
        opacity=[0.8],
        color=[[0.5, 0.5, 0.5]],
    )
    bound = bind_splats(scene, triangle_mesh)
    vector = pack_params(bound)
    np.testing.assert_allclose(vector.field("mu")[0], bound.offset[0])
    np.testing.assert_allclose(np.exp(vector.field("log_s")[0]), bound.local_scale[0])


def test_param_vector_length_is_checked() -> None:
    scene = random_scene(np.random.default_rng(0), 2)
    with pytest.raises(LayoutError):
        ParamVector(np.zeros(27), scene)
