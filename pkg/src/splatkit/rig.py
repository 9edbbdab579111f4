"""Mesh rig: triangle frames, splat binding, posing and decoupling.

A bound splat remembers the closest point on its triangle (as barycentric
coordinates) and its offset from that point in the triangle's tangent frame.
Posing rebuilds world parameters from the current triangle:

    mu = P(b) + (k / k0) R offset
    q  = q_tri ⊗ q_local
    s  = k s_local

where ``R``, ``q_tri`` and ``k`` are the rotation, its quaternion and the scale
(square root of the area) of the posed triangle, and ``k0`` is the scale at
binding time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger

from . import quaternion
from .exceptions import BindingError, DegenerateGeometryError, MeshError
from .renderer import RenderOutput, render

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from numpy.typing import ArrayLike, NDArray

    from .camera import Camera
    from .splat import Scene

    FloatArray = NDArray[np.float64]

AREA_FLOOR = 1e-12
_BIND_CHUNK = 256


@dataclass(frozen=True, eq=False)
class MeshFrame:
    """Triangle mesh at one timestep. Vertices and triangles are read-only arrays."""

    vertices: FloatArray
    triangles: NDArray[np.int64]
    timestamp: int = 0

    def __post_init__(self) -> None:  # noqa: D105
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.timestamp < 0:
            msg = f"Timestamp must be >= 0, got {self.timestamp}."
            raise MeshError(msg)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            msg = f"Triangle indices out of range for {len(vertices)} vertices."
            raise MeshError(msg)
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    def __len__(self) -> int:  # noqa: D105
        return int(self.triangles.shape[0])

    @property
    def corners(self) -> FloatArray:
        """Vertex positions per triangle, shape ``(F, 3, 3)``."""
        return self.vertices[self.triangles]

    @property
    def areas(self) -> FloatArray:
        """Area of every triangle."""
        a, b, c = np.moveaxis(self.corners, 1, 0)
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def validate(self) -> None:
        """Reject empty meshes and triangles with area at or below ``1e-12``."""
        if len(self) == 0:
            msg = "Mesh has no triangles."
            raise MeshError(msg)
        small = np.flatnonzero(self.areas <= AREA_FLOOR)
        if small.size:
            msg = f"Mesh has {small.size} degenerate triangles, first is {int(small[0])}."
            raise DegenerateGeometryError(msg)

    def same_topology(self, other: MeshFrame) -> bool:
        """Tell whether ``other`` has the same vertex count and triangles."""
        return len(self.vertices) == len(other.vertices) and np.array_equal(self.triangles, other.triangles)

    def transformed(
        self,
        rotation: ArrayLike | None = None,
        translation: ArrayLike = (0.0, 0.0, 0.0),
        scale: float = 1.0,
    ) -> MeshFrame:
        """Copy with vertices mapped by ``scale * R v + t``."""
        r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        moved = scale * self.vertices @ r.T + np.asarray(translation, dtype=np.float64)
        return MeshFrame(moved, self.triangles, self.timestamp)

    def normals(self) -> FloatArray:
        """Unit normal of every triangle."""
        a, b, c = np.moveaxis(self.corners, 1, 0)
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class TriangleFrames:
    """Origin, rotation and scale of every triangle of a mesh."""

    origin: FloatArray
    rotation: FloatArray
    scale: FloatArray

    @property
    def quaternion(self) -> FloatArray:
        """Rotations as unit quaternions."""
        return quaternion.from_matrix(self.rotation)


def triangle_frames(mesh: MeshFrame) -> TriangleFrames:
    """Frames of all triangles of ``mesh``; columns are edge, normal × edge, normal."""
    a, b, c = np.moveaxis(mesh.corners, 1, 0)
    edge = b - a
    cross = np.cross(edge, c - a)
    twice_area = np.linalg.norm(cross, axis=1)
    bad = np.flatnonzero(0.5 * twice_area <= AREA_FLOOR)
    if bad.size:
        msg = f"Triangle {int(bad[0])} is degenerate (area {0.5 * twice_area[bad[0]]:.3g})."
        raise DegenerateGeometryError(msg)
    normal = cross / twice_area[:, None]
    e1 = edge / np.linalg.norm(edge, axis=1, keepdims=True)
    e2 = np.cross(normal, e1)
    return TriangleFrames(
        origin=(a + b + c) / 3.0,
        rotation=np.stack([e1, e2, normal], axis=2),
        scale=np.sqrt(0.5 * twice_area),
    )


def triangle_frame(mesh: MeshFrame, tri_id: int) -> tuple[FloatArray, FloatArray, float]:
    """``(origin, rotation, scale)`` of triangle ``tri_id``."""
    if not 0 <= tri_id < len(mesh):
        msg = f"Triangle {tri_id} does not exist in a mesh with {len(mesh)} triangles."
        raise MeshError(msg)
    single = MeshFrame(mesh.vertices, mesh.triangles[tri_id : tri_id + 1], mesh.timestamp)
    frames = triangle_frames(single)
    return frames.origin[0], frames.rotation[0], float(frames.scale[0])


def _dot(u: FloatArray, v: FloatArray) -> FloatArray:
    return np.sum(u * v, axis=-1)


def closest_barycentric(p: ArrayLike, a: ArrayLike, b: ArrayLike, c: ArrayLike) -> FloatArray:
    """Barycentric coordinates of the point of triangle ``abc`` closest to ``p`` (broadcasting)."""
    p, a, b, c = (np.asarray(v, dtype=np.float64) for v in (p, a, b, c))
    ab, ac = b - a, c - a
    d1, d2 = _dot(ab, p - a), _dot(ac, p - a)
    d3, d4 = _dot(ab, p - b), _dot(ac, p - b)
    d5, d6 = _dot(ab, p - c), _dot(ac, p - c)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v, w = vb / denom, vc / denom
        bary = np.stack([1 - v - w, v, w], axis=-1)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        t_ac = d2 / (d2 - d6)
        t_ab = d1 / (d1 - d3)
    zero = np.zeros_like(d1)
    one = np.ones_like(d1)
    # Voronoi regions, lowest priority first.
    regions = [
        ((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), np.stack([zero, 1 - t_bc, t_bc], axis=-1)),
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0), np.stack([1 - t_ac, zero, t_ac], axis=-1)),
        ((d6 >= 0) & (d5 <= d6), np.stack([zero, zero, one], axis=-1)),
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0), np.stack([1 - t_ab, t_ab, zero], axis=-1)),
        ((d3 >= 0) & (d4 <= d3), np.stack([zero, one, zero], axis=-1)),
        ((d1 <= 0) & (d2 <= 0), np.stack([one, zero, zero], axis=-1)),
    ]
    for mask, value in regions:
        bary = np.where(mask[..., None], value, bary)
    return bary


def bind_splats(scene: Scene, mesh: MeshFrame) -> Scene:
    """Bind every splat to its nearest triangle of ``mesh``.

    Ties go to the lowest triangle id. Posing on the same frame reproduces the
    scene's world parameters.
    """
    mesh.validate()
    frames = triangle_frames(mesh)
    corners = mesh.corners
    n = len(scene)
    triangle = np.zeros(n, dtype=np.int64)
    bary = np.zeros((n, 3))
    for start in range(0, n, _BIND_CHUNK):
        mu = scene.mu[start : start + _BIND_CHUNK, None, :]
        candidates = closest_barycentric(mu, corners[None, :, 0], corners[None, :, 1], corners[None, :, 2])
        points = np.einsum("nfk,fkd->nfd", candidates, corners)
        nearest = np.argmin(np.sum((points - mu) ** 2, axis=-1), axis=1)
        rows = np.arange(len(nearest))
        triangle[start : start + _BIND_CHUNK] = nearest
        bary[start : start + _BIND_CHUNK] = candidates[rows, nearest]
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)
    anchor = np.einsum("nk,nkd->nd", bary, corners[triangle])
    rot = frames.rotation[triangle]
    offset = np.einsum("nji,nj->ni", rot, scene.mu - anchor)
    q_tri = quaternion.from_matrix(rot)
    k0 = frames.scale[triangle]
    logger.debug(f"Bound {n} splats to {len(np.unique(triangle))} of {len(mesh)} triangles")
    return scene.replace(
        bound=np.ones(n, dtype=np.bool_),
        decoupled=np.zeros(n, dtype=np.bool_),
        triangle=triangle,
        barycentric=bary,
        offset=offset,
        rest_offset=offset,
        bind_scale=k0,
        local_rotation=quaternion.multiply(quaternion.conjugate(q_tri), scene.q),
        local_scale=scene.s / k0[:, None],
    )


@dataclass(frozen=True, eq=False)
class PoseFrame:
    """Per-splat triangle quantities used by posing and its reverse pass."""

    indices: NDArray[np.int64]
    anchor: FloatArray
    rotation: FloatArray
    q_tri: FloatArray
    ratio: FloatArray
    scale: FloatArray


def pose_frame(scene: Scene, mesh: MeshFrame) -> PoseFrame:
    """Triangle quantities for every posable splat of ``scene`` on ``mesh``."""
    idx = np.flatnonzero(scene.posable)
    tri = scene.triangle[idx]
    if tri.size and tri.max() >= len(mesh):
        msg = f"Binding references triangle {int(tri.max())} but the mesh has {len(mesh)} triangles."
        raise BindingError(msg)
    if tri.size == 0:
        return PoseFrame(idx, np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros(0))
    frames = triangle_frames(mesh)
    anchor = np.einsum("nk,nkd->nd", scene.barycentric[idx], mesh.corners[tri])
    scale = frames.scale[tri]
    return PoseFrame(
        indices=idx,
        anchor=anchor,
        rotation=frames.rotation[tri],
        q_tri=quaternion.from_matrix(frames.rotation[tri]),
        ratio=scale / scene.bind_scale[idx],
        scale=scale,
    )


def pose_splats(scene: Scene, mesh: MeshFrame) -> Scene:
    """World-space scene for ``mesh``; free and decoupled splats are left as they are."""
    frame = pose_frame(scene, mesh)
    idx = frame.indices
    if idx.size == 0:
        return scene
    mu, q, s = scene.mu.copy(), scene.q.copy(), scene.s.copy()
    mu[idx] = frame.anchor + frame.ratio[:, None] * np.einsum("nij,nj->ni", frame.rotation, scene.offset[idx])
    q[idx] = quaternion.multiply(frame.q_tri, quaternion.normalize(scene.local_rotation[idx]))
    s[idx] = scene.local_scale[idx] * frame.scale[:, None]
    return scene.replace(mu=mu, q=q, s=s)


def decouple(scene: Scene, indices: ArrayLike, mesh: MeshFrame) -> Scene:
    """Release ``indices`` from the mesh, freezing their world parameters as posed on ``mesh``."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    posed = pose_splats(scene, mesh)
    decoupled = scene.decoupled.copy()
    decoupled[idx] = True
    mu, q, s = scene.mu.copy(), scene.q.copy(), scene.s.copy()
    mu[idx], q[idx], s[idx] = posed.mu[idx], posed.q[idx], posed.s[idx]
    logger.debug(f"Decoupled {idx.size} splats at t={mesh.timestamp}")
    return scene.replace(mu=mu, q=q, s=s, decoupled=decoupled)


def reenact(scene: Scene, meshes: Iterable[MeshFrame], cameras: Sequence[Camera]) -> list[list[RenderOutput]]:
    """Drive ``scene`` with a sequence of meshes and render every camera for each.

    The meshes may come from another performance as long as they share the
    binding topology.
    """
    outputs = []
    for mesh in meshes:
        posed = pose_splats(scene, mesh)
        outputs.append([render(posed, cam) for cam in cameras])
    return outputs


__all__ = [
    "MeshFrame",
    "PoseFrame",
    "TriangleFrames",
    "bind_splats",
    "closest_barycentric",
    "decouple",
    "pose_frame",
    "pose_splats",
    "reenact",
    "triangle_frame",
    "triangle_frames",
]
