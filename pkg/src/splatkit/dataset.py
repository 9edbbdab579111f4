"""Dataset manifest and lazily loaded multi-view, multi-frame datasets.

A dataset directory holds ``manifest.json``::

    {
      "version": 1,
      "extent": 1.2,
      "cameras": [{"fx": ..., "fy": ..., "cx": ..., "cy": ..., "rotation": [[...]],
                   "translation": [...], "width": 64, "height": 64}, ...],
      "frames": [{"time": 0.0, "mesh": "meshes/000.obj",
                  "images": ["images/000_00.png", ...],
                  "labels": ["labels/000_00.png", ...]}, ...],
      "label_names": {"1": "hair", "2": "face", "3": "neck"}
    }

Camera order defines the pose coordinate ``p``. ``images[p]`` of frame ``t`` is
cell ``(t, p)``; ``labels`` (segmenter masks) and ``mesh`` are optional.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import msgspec
import msgspec.json
import numpy as np
from loguru import logger

from .camera import Camera
from .exceptions import DatasetError, DimensionMismatchError, MissingFileError, TopologyMismatchError
from .gradients import View
from .storage import load_image, load_label_map, load_obj, save_image, save_label_map, save_obj

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence
    from pathlib import Path

    from numpy.typing import NDArray

    from .rig import MeshFrame

    FloatArray = NDArray[np.float64]

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1

Cell = tuple[int, int]


class CameraSpec(msgspec.Struct, forbid_unknown_fields=True):
    """Pinhole camera entry of a manifest."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: list[list[float]]
    translation: list[float]
    width: int
    height: int


class FrameSpec(msgspec.Struct, forbid_unknown_fields=True):
    """One timestep: mesh file, one image per camera, optional label maps."""

    time: float
    images: list[str]
    mesh: str | None = None
    labels: list[str] | None = None


class Manifest(msgspec.Struct, forbid_unknown_fields=True):
    """Top-level manifest document."""

    cameras: list[CameraSpec]
    frames: list[FrameSpec]
    version: int = MANIFEST_VERSION
    extent: float = 1.0
    label_names: dict[str, str] = msgspec.field(default_factory=dict)


def camera_spec(camera: Camera) -> CameraSpec:
    """Manifest entry for ``camera``."""
    return CameraSpec(
        fx=camera.fx,
        fy=camera.fy,
        cx=camera.cx,
        cy=camera.cy,
        rotation=camera.rotation.tolist(),
        translation=camera.translation.tolist(),
        width=camera.width,
        height=camera.height,
    )


def read_manifest(path: Path) -> Manifest:
    """Decode and check a manifest file."""
    if not path.exists():
        msg = f"Manifest {path} does not exist."
        raise MissingFileError(msg)
    try:
        manifest = msgspec.json.decode(path.read_bytes(), type=Manifest)
    except msgspec.ValidationError as exc:
        msg = f"Invalid manifest {path}: {exc}"
        raise DatasetError(msg) from exc
    except msgspec.DecodeError as exc:
        msg = f"Manifest {path} is not valid JSON: {exc}"
        raise DatasetError(msg) from exc
    if manifest.version != MANIFEST_VERSION:
        msg = f"Unsupported manifest version {manifest.version}."
        raise DatasetError(msg)
    if not manifest.cameras or not manifest.frames:
        msg = "A manifest needs at least one camera and one frame."
        raise DatasetError(msg)
    return manifest


def write_manifest(path: Path, manifest: Manifest) -> Path:
    """Write ``manifest`` as indented JSON."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(msgspec.json.format(msgspec.json.encode(manifest), indent=2) + b"\n")
    return path


@dataclass(eq=False)
class Dataset:
    """Cameras, per-frame meshes and lazily loaded images of a capture.

    Images and label maps come either from files (``image_paths``/``label_paths``)
    or from arrays preloaded into the cache; loading is thread safe.
    """

    cameras: tuple[Camera, ...]
    times: tuple[float, ...]
    meshes: tuple[MeshFrame, ...] | None = None
    extent: float = 1.0
    image_paths: Mapping[Cell, Path] = field(default_factory=dict)
    label_paths: Mapping[Cell, Path] = field(default_factory=dict)
    label_names: Mapping[int, str] = field(default_factory=dict)
    root: Path | None = None
    _images: dict[Cell, FloatArray] = field(default_factory=dict, repr=False)
    _labels: dict[Cell, NDArray[np.int64]] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_arrays(  # noqa: PLR0913
        cls,
        cameras: Sequence[Camera],
        images: Sequence[Sequence[FloatArray]],
        *,
        meshes: Sequence[MeshFrame] | None = None,
        labels: Sequence[Sequence[NDArray[np.int64]]] | None = None,
        times: Sequence[float] | None = None,
        extent: float = 1.0,
    ) -> Dataset:
        """In-memory dataset; ``images[t][p]`` is the image of camera ``p`` at frame ``t``."""
        dataset = cls(
            cameras=tuple(cameras),
            times=tuple(float(t) for t in (times if times is not None else range(len(images)))),
            meshes=None if meshes is None else tuple(meshes),
            extent=extent,
        )
        for t, row in enumerate(images):
            for p, image in enumerate(row):
                dataset._images[t, p] = np.asarray(image, dtype=np.float64)
        for t, row in enumerate(labels or ()):
            for p, label_map in enumerate(row):
                dataset._labels[t, p] = np.asarray(label_map, dtype=np.int64)
        dataset.check()
        return dataset

    @property
    def frame_count(self) -> int:  # noqa: D102
        return len(self.times)

    @property
    def camera_count(self) -> int:  # noqa: D102
        return len(self.cameras)

    def cells(self) -> list[Cell]:
        """Every ``(frame, camera)`` cell in frame-major order."""
        return [(t, p) for t in range(self.frame_count) for p in range(self.camera_count)]

    def check(self) -> None:
        """Eager validation: every cell has an image and meshes share topology."""
        for cell in self.cells():
            if cell not in self._images and cell not in self.image_paths:
                msg = f"No image for frame {cell[0]}, camera {cell[1]}."
                raise MissingFileError(msg, cell=cell)
            path = self.image_paths.get(cell)
            if path is not None and not path.exists():
                msg = f"Image {path} for frame {cell[0]}, camera {cell[1]} does not exist."
                raise MissingFileError(msg, cell=cell)
        for cell, path in self.label_paths.items():
            if not path.exists():
                msg = f"Label map {path} for frame {cell[0]}, camera {cell[1]} does not exist."
                raise MissingFileError(msg, cell=cell)
        if self.meshes:
            if len(self.meshes) != self.frame_count:
                msg = f"{len(self.meshes)} meshes for {self.frame_count} frames."
                raise DatasetError(msg)
            first = self.meshes[0]
            first.validate()
            for t, mesh in enumerate(self.meshes[1:], start=1):
                if not first.same_topology(mesh):
                    msg = f"Mesh of frame {t} does not share the topology of frame 0."
                    raise TopologyMismatchError(msg, cell=(t, 0))

    def _check_cell(self, t: int, p: int) -> None:
        if not (0 <= t < self.frame_count and 0 <= p < self.camera_count):
            msg = f"Cell ({t}, {p}) is outside {self.frame_count} frames x {self.camera_count} cameras."
            raise DatasetError(msg, cell=(t, p))

    def image(self, t: int, p: int) -> FloatArray:
        """Target image of camera ``p`` at frame ``t``."""
        self._check_cell(t, p)
        with self._lock:
            cached = self._images.get((t, p))
            if cached is None:
                cached = load_image(self.image_paths[t, p])
                if cached.shape[:2] != self.cameras[p].shape:
                    msg = f"Image {self.image_paths[t, p]} is {cached.shape[:2]}, camera expects {self.cameras[p].shape}."
                    raise DimensionMismatchError(msg)
                self._images[t, p] = cached
        return cached

    def labels(self, t: int, p: int) -> NDArray[np.int64] | None:
        """Segmenter label map of cell ``(t, p)``, if the dataset has one."""
        self._check_cell(t, p)
        with self._lock:
            cached = self._labels.get((t, p))
            if cached is None and (t, p) in self.label_paths:
                cached = load_label_map(self.label_paths[t, p])
                self._labels[t, p] = cached
        return cached

    def mesh(self, t: int) -> MeshFrame | None:
        """Mesh of frame ``t``, or ``None`` for mesh-less datasets."""
        if not self.meshes:
            return None
        return self.meshes[t]

    def view(self, t: int, p: int) -> View:
        """Supervision sample of cell ``(t, p)``."""
        return View(self.cameras[p], self.image(t, p), self.mesh(t), self.labels(t, p), self.times[t])


def _resolve(root: Path, name: str) -> Path:
    return (root / name).resolve()


def load_dataset(path: Path) -> Dataset:
    """Load a dataset from its manifest file or directory.

    The manifest, mesh topology and file presence are checked eagerly; images
    and label maps are read on first use.
    """
    manifest_path = path / MANIFEST if path.is_dir() else path
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    cameras = tuple(
        Camera(c.fx, c.fy, c.cx, c.cy, np.array(c.rotation), np.array(c.translation), c.width, c.height, pose_index=p)
        for p, c in enumerate(manifest.cameras)
    )
    image_paths: dict[Cell, Path] = {}
    label_paths: dict[Cell, Path] = {}
    meshes: list[MeshFrame] = []
    with_mesh = [frame.mesh is not None for frame in manifest.frames]
    if any(with_mesh) and not all(with_mesh):
        msg = "Either every frame or no frame must name a mesh."
        raise DatasetError(msg)
    for t, frame in enumerate(manifest.frames):
        if len(frame.images) != len(cameras):
            msg = f"Frame {t} lists {len(frame.images)} images for {len(cameras)} cameras."
            raise DatasetError(msg, cell=(t, min(len(frame.images), len(cameras))))
        if frame.labels is not None and len(frame.labels) != len(cameras):
            msg = f"Frame {t} lists {len(frame.labels)} label maps for {len(cameras)} cameras."
            raise DatasetError(msg, cell=(t, 0))
        for p, name in enumerate(frame.images):
            image_paths[t, p] = _resolve(root, name)
        for p, name in enumerate(frame.labels or ()):
            label_paths[t, p] = _resolve(root, name)
        if frame.mesh is not None:
            mesh_path = _resolve(root, frame.mesh)
            if not mesh_path.exists():
                msg = f"Mesh {mesh_path} of frame {t} does not exist."
                raise MissingFileError(msg, cell=(t, 0))
            meshes.append(load_obj(mesh_path, timestamp=t))
    dataset = Dataset(
        cameras=cameras,
        times=tuple(frame.time for frame in manifest.frames),
        meshes=tuple(meshes) or None,
        extent=manifest.extent,
        image_paths=image_paths,
        label_paths=label_paths,
        label_names={int(k): v for k, v in manifest.label_names.items()},
        root=root,
    )
    dataset.check()
    logger.info(f"Loaded dataset {root}: {dataset.camera_count} cameras, {dataset.frame_count} frames")
    return dataset


def save_dataset(root: Path, dataset: Dataset) -> Path:
    """Write ``dataset`` as a manifest directory; returns the manifest path."""
    frames = []
    for t in range(dataset.frame_count):
        images, labels = [], []
        for p in range(dataset.camera_count):
            name = f"images/{t:03d}_{p:02d}.png"
            save_image(root / name, dataset.image(t, p))
            images.append(name)
            label_map = dataset.labels(t, p)
            if label_map is not None:
                label_name = f"labels/{t:03d}_{p:02d}.png"
                save_label_map(root / label_name, label_map)
                labels.append(label_name)
        mesh_name = None
        mesh = dataset.mesh(t)
        if mesh is not None:
            mesh_name = f"meshes/{t:03d}.obj"
            save_obj(root / mesh_name, mesh)
        frames.append(FrameSpec(time=dataset.times[t], images=images, mesh=mesh_name, labels=labels or None))
    manifest = Manifest(
        cameras=[camera_spec(cam) for cam in dataset.cameras],
        frames=frames,
        extent=dataset.extent,
        label_names={str(k): v for k, v in sorted(dataset.label_names.items())},
    )
    return write_manifest(root / MANIFEST, manifest)


__all__ = [
    "MANIFEST",
    "CameraSpec",
    "Dataset",
    "FrameSpec",
    "Manifest",
    "camera_spec",
    "load_dataset",
    "read_manifest",
    "save_dataset",
    "write_manifest",
]
