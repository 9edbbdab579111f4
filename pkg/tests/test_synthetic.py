"""Synthetic capture generator."""
from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from splatkit.renderer import render
from splatkit.rig import pose_splats
from splatkit.segmentation import LOWER, MIDDLE, UPPER
from splatkit.storage import load_scene
from splatkit.synthetic import (
    GROUND_TRUTH,
    SyntheticConfig,
    band_label,
    deform,
    generate_synthetic_scene,
    icosphere,
    jaw_phase,
)
from tests.conftest import TINY

if TYPE_CHECKING:
    from pathlib import Path

    from splatkit.synthetic import SyntheticScene


@pytest.mark.parametrize(("subdivisions", "vertices", "faces"), [(0, 12, 20), (1, 42, 80), (2, 162, 320)])
def test_icosphere_counts(subdivisions: int, vertices: int, faces: int) -> None:
    mesh = icosphere(subdivisions)
    assert mesh.vertices.shape == (vertices, 3)
    assert len(mesh) == faces
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0)
    mesh.validate()


def test_jaw_opens_mid_sequence() -> None:
    assert jaw_phase(0, 5) == 0.0
    assert jaw_phase(2, 5) == pytest.approx(1.0)
    assert jaw_phase(0, 1) == 0.0
    rest = icosphere(1)
    np.testing.assert_array_equal(deform(rest, 0, TINY).vertices, rest.vertices)
    opened = deform(rest, 1, SyntheticConfig(frames=3))
    top = rest.vertices[:, 1] > 0
    np.testing.assert_array_equal(opened.vertices[top], rest.vertices[top])
    assert opened.timestamp == 1
    assert opened.same_topology(rest)


def test_band_label() -> None:
    assert band_label(np.array([0.9, 0.0, -0.9, 0.33, -0.34])).tolist() == [UPPER, MIDDLE, LOWER, MIDDLE, LOWER]


def test_generation_is_deterministic(tiny_capture: SyntheticScene) -> None:
    again = generate_synthetic_scene(0, TINY)
    for t, p in tiny_capture.dataset.cells():
        np.testing.assert_array_equal(again.dataset.image(t, p), tiny_capture.dataset.image(t, p))
    np.testing.assert_array_equal(again.scene.mu, tiny_capture.scene.mu)
    other = generate_synthetic_scene(1, TINY)
    assert not np.array_equal(other.dataset.image(0, 0), tiny_capture.dataset.image(0, 0))


def test_capture_shape(tiny_capture: SyntheticScene) -> None:
    dataset = tiny_capture.dataset
    assert (dataset.frame_count, dataset.camera_count) == (TINY.frames, TINY.cameras)
    assert dataset.image(0, 0).shape == (TINY.height, TINY.width, 3)
    assert len(tiny_capture.scene) == TINY.splats
    assert tiny_capture.scene.bound.all()
    assert set(np.unique(tiny_capture.scene.label)) <= {UPPER, MIDDLE, LOWER}
    assert dataset.image(0, 0).any()


def test_written_ground_truth_reproduces_the_images(tmp_path: Path) -> None:
    result = generate_synthetic_scene(3, TINY, tmp_path / "synth")
    truth = load_scene(tmp_path / "synth" / GROUND_TRUTH)
    np.testing.assert_array_equal(truth.mu, result.scene.mu)
    posed = pose_splats(truth, result.meshes[1])
    rerendered = render(posed, result.dataset.cameras[2])
    np.testing.assert_array_equal(rerendered.color, result.dataset.image(1, 2))
    assert (tmp_path / "synth" / "manifest.json").exists()
    assert not (tmp_path / "synth" / ".splatkit.lock").exists()
