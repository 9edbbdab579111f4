"""On-disk formats: splat files, images, masks, OBJ meshes, optimizer sidecars.

Splat file layout (little-endian)::

    8 bytes   magic  b"SPLATKIT"
    uint32    version
    uint32    splat count
    uint32    layout length, then the layout text ("name:type:width,...")
    records   one packed record per splat

Floats are stored as 32-bit values, so saving a float64 scene rounds it once;
any loaded scene saves back to identical bytes.
"""
from __future__ import annotations

import os
import struct
from contextlib import suppress
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger
from PIL import Image

from .exceptions import DirectoryLockedError, MeshError, MissingFileError, SplatFileError, SplatFileVersionError
from .optim import AdamState, Schedule
from .rig import MeshFrame
from .splat import Scene

if TYPE_CHECKING:
    from pathlib import Path
    from types import TracebackType

    from numpy.typing import ArrayLike, NDArray

    FloatArray = NDArray[np.float64]

MAGIC = b"SPLATKIT"
VERSION = 1
LOCK_NAME = ".splatkit.lock"

_HEADER = struct.Struct("<8sII")
_LENGTH = struct.Struct("<I")
_CODES = {np.float64: "f4", np.int64: "i4", np.bool_: "u1"}


def _record_dtype() -> np.dtype:
    fields = []
    for name, (dtype, width) in Scene._shapes.items():  # noqa: SLF001
        code = "<" + _CODES[dtype]
        fields.append((name, code) if width is None else (name, code, (width,)))
    return np.dtype(fields)


RECORD = _record_dtype()


def layout_text() -> str:
    """Field layout written into every splat file header."""
    parts = []
    for name, (dtype, width) in Scene._shapes.items():  # noqa: SLF001
        parts.append(f"{name}:{_CODES[dtype]}:{width or 1}")
    return ",".join(parts)


def encode_scene(scene: Scene) -> bytes:
    """Serialise ``scene`` to splat file bytes."""
    records = np.zeros(len(scene), dtype=RECORD)
    for name, column in scene.columns().items():
        records[name] = column
    layout = layout_text().encode("ascii")
    return _HEADER.pack(MAGIC, VERSION, len(scene)) + _LENGTH.pack(len(layout)) + layout + records.tobytes()


def decode_scene(data: bytes) -> Scene:
    """Parse splat file bytes; nothing is returned unless the whole file is valid."""
    if len(data) < _HEADER.size + _LENGTH.size:
        msg = "Splat file is truncated inside its header."
        raise SplatFileError(msg)
    magic, version, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        msg = f"Not a splat file (magic {magic!r})."
        raise SplatFileVersionError(msg)
    if version != VERSION:
        msg = f"Unsupported splat file version {version}; expected {VERSION}."
        raise SplatFileVersionError(msg)
    (length,) = _LENGTH.unpack_from(data, _HEADER.size)
    start = _HEADER.size + _LENGTH.size
    layout = data[start : start + length].decode("ascii", errors="replace")
    if layout != layout_text():
        msg = f"Splat file layout {layout!r} does not match this version."
        raise SplatFileError(msg)
    body = data[start + length :]
    if len(body) != count * RECORD.itemsize:
        msg = f"Splat file holds {len(body)} record bytes, expected {count * RECORD.itemsize}."
        raise SplatFileError(msg)
    records = np.frombuffer(body, dtype=RECORD, count=count)
    columns = {}
    for name, (dtype, _) in Scene._shapes.items():  # noqa: SLF001
        columns[name] = records[name].astype(dtype)
    scene = Scene(**columns)
    scene.validate()
    return scene


def save_scene(path: Path, scene: Scene) -> Path:
    """Write ``scene`` to ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_scene(scene))
    logger.debug(f"Wrote {len(scene)} splats to {path}")
    return path


def load_scene(path: Path) -> Scene:
    """Read a splat file."""
    if not path.exists():
        msg = f"Splat file {path} does not exist."
        raise MissingFileError(msg)
    return decode_scene(path.read_bytes())


def quantize(scene: Scene) -> Scene:
    """The scene as it reads back from a splat file."""
    return decode_scene(encode_scene(scene))


# Images


def to_uint8(image: ArrayLike) -> NDArray[np.uint8]:
    """Round a [0, 1] image to 8 bits."""
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(path: Path, image: ArrayLike) -> Path:
    """Write an ``(H, W, 3)`` or ``(H, W)`` image in [0, 1]; the suffix picks PNG or PPM."""
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path)
    return path


def load_image(path: Path) -> FloatArray:
    """Read an RGB image as float64 in [0, 1]."""
    if not path.exists():
        msg = f"Image {path} does not exist."
        raise MissingFileError(msg)
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def save_mask(path: Path, mask: ArrayLike) -> Path:
    """Write a soft or binary mask as an 8-bit grayscale PNG."""
    return save_image(path, np.asarray(mask, dtype=np.float64))


def load_mask(path: Path) -> FloatArray:
    """Read a grayscale mask as float64 in [0, 1]."""
    if not path.exists():
        msg = f"Mask {path} does not exist."
        raise MissingFileError(msg)
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def save_label_map(path: Path, labels: ArrayLike) -> Path:
    """Write integer labels (0..255) as a grayscale PNG holding the raw ids."""
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(labels, dtype=np.uint8)).save(path)
    return path


def load_label_map(path: Path) -> NDArray[np.int64]:
    """Read a label PNG written by :func:`save_label_map`."""
    if not path.exists():
        msg = f"Label map {path} does not exist."
        raise MissingFileError(msg)
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.int64)


# Meshes


def save_obj(path: Path, mesh: MeshFrame) -> Path:
    """Write vertices and triangles as OBJ text; coordinates round-trip exactly."""
    lines = [f"# t {int(mesh.timestamp)}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_obj(path: Path, timestamp: int | None = None) -> MeshFrame:
    """Read the ``v``/``f`` subset of OBJ; polygons are fanned into triangles."""
    if not path.exists():
        msg = f"Mesh {path} does not exist."
        raise MissingFileError(msg)
    vertices: list[list[float]] = []
    triangles: list[list[int]] = []
    stored_time = 0
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        match parts[0]:
            case "v":
                vertices.append([float(v) for v in parts[1:4]])
            case "f":
                ids = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(ids) < 3:  # noqa: PLR2004
                    msg = f"{path}:{number}: face with fewer than three vertices."
                    raise MeshError(msg)
                triangles += [[ids[0], ids[k], ids[k + 1]] for k in range(1, len(ids) - 1)]
            case "#" if len(parts) == 3 and parts[1] == "t":  # noqa: PLR2004
                stored_time = int(parts[2])
            case _:
                continue
    return MeshFrame(
        np.array(vertices, dtype=np.float64).reshape(-1, 3),
        np.array(triangles, dtype=np.int64).reshape(-1, 3),
        stored_time if timestamp is None else timestamp,
    )


# Optimizer sidecar


def save_optimizer_state(path: Path, state: AdamState, iteration: int) -> Path:
    """Write moments, step, schedule and the training iteration next to a checkpoint."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez(
            fh,
            m=state.m,
            v=state.v,
            step=np.array(state.step),
            schedule=np.array([state.schedule.start, state.schedule.end, state.schedule.iterations], dtype=np.float64),
            betas=np.array([state.beta1, state.beta2, state.eps]),
            lr_scale=np.zeros(0) if state.lr_scale is None else state.lr_scale,
            iteration=np.array(iteration),
        )
    return path


def load_optimizer_state(path: Path) -> tuple[AdamState, int]:
    """Read a sidecar written by :func:`save_optimizer_state`."""
    if not path.exists():
        msg = f"Optimizer state {path} does not exist."
        raise MissingFileError(msg)
    with np.load(path) as data:
        start, end, iterations = data["schedule"].tolist()
        beta1, beta2, eps = data["betas"].tolist()
        lr_scale = data["lr_scale"]
        state = AdamState(
            m=data["m"].copy(),
            v=data["v"].copy(),
            step=int(data["step"]),
            schedule=Schedule(start, end, int(iterations)),
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            lr_scale=lr_scale.copy() if lr_scale.size else None,
        )
        return state, int(data["iteration"])


# Output directory lock


class DirectoryLock:
    """Exclusive writer lock on an output directory.

    The lock is a file created with ``O_CREAT | O_EXCL``; a second writer fails
    with :class:`DirectoryLockedError` instead of interleaving outputs.
    """

    def __init__(self, directory: Path) -> None:  # noqa: D107
        self.directory = directory
        self.path = directory / LOCK_NAME
        self._held = False

    def acquire(self) -> None:
        """Take the lock."""
        self.directory.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            msg = f"{self.directory} is locked by another writer ({self.path})."
            raise DirectoryLockedError(msg) from exc
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(str(os.getpid()))
        self._held = True

    def release(self) -> None:
        """Drop the lock if held."""
        if self._held:
            with suppress(FileNotFoundError):
                self.path.unlink()
            self._held = False

    def __enter__(self) -> DirectoryLock:  # noqa: D105
        self.acquire()
        return self

    def __exit__(  # noqa: D105
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.release()


__all__ = [
    "MAGIC",
    "VERSION",
    "DirectoryLock",
    "decode_scene",
    "encode_scene",
    "layout_text",
    "load_image",
    "load_label_map",
    "load_mask",
    "load_obj",
    "load_optimizer_state",
    "load_scene",
    "quantize",
    "save_image",
    "save_label_map",
    "save_mask",
    "save_obj",
    "save_optimizer_state",
    "save_scene",
]
