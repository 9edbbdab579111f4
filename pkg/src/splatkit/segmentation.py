"""Semantic segmentation of images and label voting onto splats."""
from __future__ import annotations

from typing import TYPE_CHECKING, Protocol, runtime_checkable

import numpy as np
from loguru import logger

from .exceptions import DimensionMismatchError
from .renderer import render

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from .camera import Camera
    from .splat import Scene

    LabelMap = NDArray[np.int64]

UPPER, MIDDLE, LOWER = 1, 2, 3
LABEL_NAMES: dict[int, str] = {UPPER: "hair", MIDDLE: "face", LOWER: "neck"}


@runtime_checkable
class Segmenter(Protocol):
    """Turns an ``H×W×3`` image into an ``H×W`` map of label ids (0 = background)."""

    def segment(self, image: NDArray[np.float64]) -> LabelMap:
        """Label every pixel of ``image``."""
        ...


class BandSegmenter:
    """Splits the foreground into three horizontal bands: upper, middle and lower thirds."""

    def __init__(self, background_threshold: float = 1e-3) -> None:
        """Pixels with every channel at or below ``background_threshold`` are background."""
        self.background_threshold = background_threshold

    def segment(self, image: NDArray[np.float64]) -> LabelMap:  # noqa: D102
        foreground = np.any(np.asarray(image) > self.background_threshold, axis=2)
        labels = np.zeros(foreground.shape, dtype=np.int64)
        rows = np.flatnonzero(foreground.any(axis=1))
        if rows.size == 0:
            return labels
        top, bottom = rows[0], rows[-1] + 1
        edges = np.linspace(top, bottom, 4)
        y = np.arange(foreground.shape[0])[:, None]
        band = np.where(y < edges[1], UPPER, np.where(y < edges[2], MIDDLE, LOWER))
        return np.where(foreground, np.broadcast_to(band, foreground.shape), 0).astype(np.int64)


def assign_labels(scene: Scene, label_maps: Sequence[LabelMap], cameras: Sequence[Camera]) -> Scene:
    """Majority vote of ``label_maps`` over the pixels each splat wins, across all views.

    Ties go to the smaller label. Splats that win no pixel get label 0.
    """
    if len(label_maps) != len(cameras):
        msg = f"Got {len(label_maps)} label maps for {len(cameras)} cameras."
        raise DimensionMismatchError(msg)
    n = len(scene)
    n_labels = max((int(np.max(m)) for m in label_maps), default=0) + 1
    votes = np.zeros((n, n_labels), dtype=np.int64)
    for label_map, cam in zip(label_maps, cameras, strict=True):
        label_map = np.asarray(label_map, dtype=np.int64)
        if label_map.shape != cam.shape:
            msg = f"Label map of shape {label_map.shape} does not match camera {cam.pose_index} ({cam.shape})."
            raise DimensionMismatchError(msg)
        winner = render(scene, cam).winner
        seen = winner >= 0
        np.add.at(votes, (winner[seen], label_map[seen]), 1)
    voted = votes.sum(axis=1) > 0
    labels = np.where(voted, np.argmax(votes, axis=1), 0)
    logger.debug(f"Label vote: {int(voted.sum())} of {n} splats won pixels in {len(cameras)} views")
    return scene.replace(label=labels)


__all__ = ["LABEL_NAMES", "BandSegmenter", "Segmenter", "assign_labels"]
