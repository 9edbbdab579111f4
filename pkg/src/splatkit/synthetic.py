"""Deterministic synthetic head-like captures.

The subject is an icosphere whose lower part opens and closes over time like a
jaw. Ground-truth splats are sampled on the sphere, bound to it and colored by
three horizontal bands (upper, middle, lower). Images and segmenter label maps
are rendered from the ground truth by :func:`splatkit.renderer.render`, so a
scene reloaded from the written splat file reproduces every stored image.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger

from . import quaternion
from .camera import orbit_cameras
from .dataset import Dataset, save_dataset
from .renderer import render
from .rig import MeshFrame, bind_splats, pose_splats
from .segmentation import LABEL_NAMES, LOWER, MIDDLE, UPPER
from .splat import Scene
from .storage import DirectoryLock, quantize, save_scene

if TYPE_CHECKING:
    from pathlib import Path

    from numpy.typing import NDArray

    FloatArray = NDArray[np.float64]

BAND_EDGE = 0.33
GROUND_TRUTH = "ground_truth.splat"
_BAND_COLORS = {
    UPPER: (0.35, 0.22, 0.12),
    MIDDLE: (0.88, 0.68, 0.56),
    LOWER: (0.72, 0.52, 0.44),
}


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator options. Values are desk-scale choices, not capture statistics."""

    cameras: int = 8
    frames: int = 10
    width: int = 64
    height: int = 64
    splats: int = 400
    subdivisions: int = 2
    jaw_amplitude: float = 0.15
    camera_radius: float = 4.0
    elevation: float = 0.15
    fov_degrees: float = 40.0


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Generated dataset with its ground truth."""

    dataset: Dataset
    scene: Scene
    meshes: tuple[MeshFrame, ...]


def icosphere(subdivisions: int = 2) -> MeshFrame:
    """Unit icosphere; each subdivision splits every triangle into four."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]  # fmt: skip
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]  # fmt: skip
    points = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in vertices]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int, cache: dict[tuple[int, int], int] = cache) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = points[a] + points[b]
                points.append(m / np.linalg.norm(m))
                cache[key] = len(points) - 1
            return cache[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined
    return MeshFrame(np.array(points), np.array(faces, dtype=np.int64))


def jaw_phase(t: int, frames: int) -> float:
    """Opening of the jaw at frame ``t``: 0 at the first frame, 1 mid-sequence."""
    if frames <= 1:
        return 0.0
    return float(np.sin(np.pi * t / (frames - 1)))


def deform(rest: MeshFrame, t: int, config: SyntheticConfig) -> MeshFrame:
    """Rest mesh with the jaw opened for frame ``t``."""
    y = rest.vertices[:, 1]
    weight = np.clip((-y - 0.2) / 0.8, 0.0, 1.0)
    amount = config.jaw_amplitude * jaw_phase(t, config.frames) * weight
    shift = np.stack([np.zeros_like(y), -amount, 0.5 * amount], axis=1)
    return MeshFrame(rest.vertices + shift, rest.triangles, timestamp=t)


def band_label(y: FloatArray) -> NDArray[np.int64]:
    """Band of world heights ``y``: upper above the edge, lower below its negative."""
    return np.where(y > BAND_EDGE, UPPER, np.where(y < -BAND_EDGE, LOWER, MIDDLE)).astype(np.int64)


def ground_truth_scene(mesh: MeshFrame, count: int, rng: np.random.Generator) -> Scene:
    """Bound, banded splats covering ``mesh``."""
    areas = mesh.areas
    tri = rng.choice(len(mesh), size=count, p=areas / areas.sum())
    r1, r2 = rng.random(count), rng.random(count)
    root = np.sqrt(r1)
    bary = np.stack([1.0 - root, root * (1.0 - r2), root * r2], axis=1)
    points = np.einsum("nk,nkd->nd", bary, mesh.corners[tri])
    labels = band_label(points[:, 1])
    base = np.array([_BAND_COLORS[int(k)] for k in labels])
    texture = 0.08 * np.sin(5.0 * points[:, [0]] + np.array([0.0, 1.0, 2.0])) * np.cos(3.0 * points[:, [2]])
    color = np.clip(base + texture + rng.normal(0.0, 0.02, size=(count, 3)), 0.02, 0.98)
    radius = 0.6 * np.sqrt(areas.sum() / count)
    scales = radius * np.stack([rng.uniform(0.8, 1.2, count), rng.uniform(0.8, 1.2, count), np.full(count, 0.4)], axis=1)
    scene = Scene.from_arrays(
        mu=points,
        q=quaternion.random_unit(rng, count),
        s=scales,
        opacity=rng.uniform(0.7, 0.95, count),
        color=color,
        label=labels,
    )
    return bind_splats(scene, mesh)


def generate_synthetic_scene(seed: int, config: SyntheticConfig | None = None, out_dir: Path | None = None) -> SyntheticScene:
    """Build (and with ``out_dir``, write) a synthetic dataset; a pure function of ``(seed, config)``.

    The ground truth is rounded through the splat file format before rendering.
    """
    config = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    rest = icosphere(config.subdivisions)
    meshes = tuple(deform(rest, t, config) for t in range(config.frames))
    scene = quantize(ground_truth_scene(meshes[0], config.splats, rng))
    cameras = orbit_cameras(
        config.cameras,
        radius=config.camera_radius,
        width=config.width,
        height=config.height,
        elevation=config.elevation,
        fov_degrees=config.fov_degrees,
    )
    images, labels = [], []
    for mesh in meshes:
        posed = pose_splats(scene, mesh)
        outputs = [render(posed, cam) for cam in cameras]
        images.append([out.color for out in outputs])
        labels.append([out.labels for out in outputs])
    dataset = Dataset.from_arrays(
        cameras,
        images,
        meshes=meshes,
        labels=labels,
        times=[float(t) for t in range(config.frames)],
        extent=float(np.max(np.linalg.norm(rest.vertices, axis=1))) + config.jaw_amplitude,
    )
    dataset.label_names = dict(LABEL_NAMES)
    if out_dir is not None:
        with DirectoryLock(out_dir):
            save_dataset(out_dir, dataset)
            save_scene(out_dir / GROUND_TRUTH, scene)
        logger.info(f"Synthetic dataset (seed {seed}) written to {out_dir}")
    return SyntheticScene(dataset, scene, meshes)


__all__ = [
    "GROUND_TRUTH",
    "SyntheticConfig",
    "SyntheticScene",
    "band_label",
    "deform",
    "generate_synthetic_scene",
    "ground_truth_scene",
    "icosphere",
    "jaw_phase",
]
