"""Band segmenter and per-splat label votes."""
from __future__ import annotations

import numpy as np
import pytest

from splatkit import quaternion
from splatkit.camera import Camera
from splatkit.exceptions import DimensionMismatchError
from splatkit.segmentation import LABEL_NAMES, LOWER, MIDDLE, UPPER, BandSegmenter, Segmenter, assign_labels
from splatkit.splat import Scene


def test_band_segmenter_thirds() -> None:
    image = np.zeros((12, 4, 3))
    image[3:9] = 0.5
    labels = BandSegmenter().segment(image)
    assert isinstance(BandSegmenter(), Segmenter)
    np.testing.assert_array_equal(labels[:3], 0)
    np.testing.assert_array_equal(labels[3:5], UPPER)
    np.testing.assert_array_equal(labels[5:7], MIDDLE)
    np.testing.assert_array_equal(labels[7:9], LOWER)
    np.testing.assert_array_equal(labels[9:], 0)


def test_band_segmenter_blank_image() -> None:
    assert not BandSegmenter().segment(np.zeros((5, 5, 3))).any()


def test_label_names() -> None:
    assert LABEL_NAMES == {1: "hair", 2: "face", 3: "neck"}


def _row_of_splats() -> Scene:
    return Scene.from_arrays(
        mu=[[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 10.0]],
        q=np.tile(quaternion.IDENTITY, (3, 1)),
        s=np.full((3, 3), 0.15),
        opacity=[0.9, 0.9, 0.9],
        color=np.full((3, 3), 0.5),
        label=[0, 0, 7],
    )


def test_assign_labels_majority_vote(front_camera: Camera) -> None:
    label_map = np.zeros(front_camera.shape, dtype=np.int64)
    label_map[:, :16] = 1
    label_map[:, 16:] = 3
    labeled = assign_labels(_row_of_splats(), [label_map], [front_camera])
    # Splat 0 sits left of the image center, splat 1 right; splat 2 is behind the camera and drops its label.
    assert labeled.label.tolist() == [1, 3, 0]
    agreeing = assign_labels(_row_of_splats(), [label_map] * 4, [front_camera] * 4)
    assert agreeing.label.tolist() == labeled.label.tolist()


def test_assign_labels_checks_shapes(front_camera: Camera) -> None:
    with pytest.raises(DimensionMismatchError):
        assign_labels(_row_of_splats(), [np.zeros((4, 4), dtype=np.int64)], [front_camera])
    with pytest.raises(DimensionMismatchError):
        assign_labels(_row_of_splats(), [], [front_camera])
