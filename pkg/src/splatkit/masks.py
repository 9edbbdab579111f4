"""Edit masks over the (time, pose) plane.

A :class:`MaskGrid` holds one mask per node of a rectangular lattice of time
steps and camera pose coordinates. :func:`warp_mask` bilinearly blends the four
nodes around a query and thresholds the result; :func:`select_splats` turns the
warped masks into the set of splats that contribute inside them.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger

from .exceptions import DimensionMismatchError, EmptyGridError, IncompleteGridError, InvalidParameterError
from .renderer import render

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Mapping, Sequence

    from numpy.typing import ArrayLike, NDArray

    from .camera import Camera
    from .splat import Scene

    FloatArray = NDArray[np.float64]

DEFAULT_THRESHOLD = 0.5
DEFAULT_MIN_WEIGHT = 1e-3


@dataclass(frozen=True, eq=False)
class SemanticMask:
    """Binary edit region at one time and pose; ``clamped`` flags a query outside the grid."""

    mask: NDArray[np.bool_]
    time: float
    pose: float
    clamped: bool = False

    @property
    def width(self) -> int:  # noqa: D102
        return int(self.mask.shape[1])

    @property
    def height(self) -> int:  # noqa: D102
        return int(self.mask.shape[0])


@dataclass(frozen=True, eq=False)
class MaskGrid:
    """Masks in [0, 1] at every node of ``times × poses``; ``values`` is ``(T, P, H, W)``."""

    times: FloatArray
    poses: FloatArray
    values: FloatArray

    def __post_init__(self) -> None:  # noqa: D105
        for name in ("times", "poses", "values"):
            array = np.array(getattr(self, name), dtype=np.float64)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def empty(self) -> bool:  # noqa: D102
        return self.values.size == 0

    @property
    def nodes(self) -> list[tuple[float, float]]:
        """Every ``(time, pose)`` node, time-major."""
        return [(float(t), float(p)) for t in self.times for p in self.poses]

    @property
    def shape(self) -> tuple[int, int]:
        """``(height, width)`` of the node masks."""
        return int(self.values.shape[2]), int(self.values.shape[3])

    def node(self, t: float, p: float) -> FloatArray:
        """Mask stored at node ``(t, p)``."""
        i = np.flatnonzero(self.times == t)
        j = np.flatnonzero(self.poses == p)
        if i.size == 0 or j.size == 0:
            msg = f"({t}, {p}) is not a grid node."
            raise IncompleteGridError(msg)
        return self.values[i[0], j[0]]


def build_mask_grid(masks: Mapping[tuple[float, float], ArrayLike]) -> MaskGrid:
    """Assemble per-node masks into a grid; every ``(time, pose)`` combination must be present."""
    if not masks:
        return MaskGrid(np.zeros(0), np.zeros(0), np.zeros((0, 0, 0, 0)))
    times = np.array(sorted({float(t) for t, _ in masks}))
    poses = np.array(sorted({float(p) for _, p in masks}))
    by_node = {(float(t), float(p)): np.asarray(m, dtype=np.float64) for (t, p), m in masks.items()}
    shape = next(iter(by_node.values())).shape
    values = np.zeros((times.size, poses.size, *shape))
    for i, t in enumerate(times):
        for j, p in enumerate(poses):
            mask = by_node.get((float(t), float(p)))
            if mask is None:
                msg = f"Mask grid is missing node (t={t}, p={p})."
                raise IncompleteGridError(msg)
            if mask.shape != shape:
                msg = f"Mask at (t={t}, p={p}) has shape {mask.shape}, expected {shape}."
                raise DimensionMismatchError(msg)
            if mask.size and (mask.min() < 0 or mask.max() > 1):
                msg = f"Mask at (t={t}, p={p}) has values outside [0, 1]."
                raise InvalidParameterError(msg)
            values[i, j] = mask
    return MaskGrid(times, poses, values)


def _bracket(nodes: FloatArray, x: float) -> tuple[int, int, float]:
    if nodes.size == 1:
        return 0, 0, 0.0
    hi = int(np.clip(np.searchsorted(nodes, x, side="right"), 1, nodes.size - 1))
    lo = hi - 1
    return lo, hi, (x - nodes[lo]) / (nodes[hi] - nodes[lo])


def interpolate(grid: MaskGrid, t: float, p: float) -> tuple[FloatArray, bool]:
    """Bilinear blend of the four nodes around ``(t, p)`` and whether the query was clamped."""
    if grid.empty:
        msg = "Cannot query an empty mask grid."
        raise EmptyGridError(msg)
    ct = float(np.clip(t, grid.times[0], grid.times[-1]))
    cp = float(np.clip(p, grid.poses[0], grid.poses[-1]))
    clamped = ct != t or cp != p
    if clamped:
        logger.debug(f"Mask query ({t}, {p}) clamped to ({ct}, {cp})")
    i0, i1, u = _bracket(grid.times, ct)
    j0, j1, v = _bracket(grid.poses, cp)
    v00, v10 = grid.values[i0, j0], grid.values[i1, j0]
    v01, v11 = grid.values[i0, j1], grid.values[i1, j1]
    blended = (1 - u) * (1 - v) * v00 + u * (1 - v) * v10 + (1 - u) * v * v01 + u * v * v11
    return blended, clamped


def warp_mask(grid: MaskGrid, t: float, p: float, threshold: float = DEFAULT_THRESHOLD) -> SemanticMask:
    """Binary mask at ``(t, p)``: pixels whose blended value is at least ``threshold``."""
    blended, clamped = interpolate(grid, t, p)
    return SemanticMask(blended >= threshold, float(t), float(p), clamped)


@dataclass(frozen=True, eq=False)
class SplatSelection:
    """Selected splat indices (ascending) and their accumulated in-mask weight."""

    indices: NDArray[np.int64]
    weights: FloatArray

    def __len__(self) -> int:  # noqa: D105
        return int(self.indices.size)

    def __contains__(self, index: object) -> bool:  # noqa: D105
        return bool(np.isin(index, self.indices))

    def mask(self, count: int) -> NDArray[np.bool_]:
        """Boolean membership over a scene of ``count`` splats."""
        out = np.zeros(count, dtype=np.bool_)
        out[self.indices] = True
        return out

    def union(self, other: SplatSelection) -> SplatSelection:
        """Splats in either selection; weights of shared splats add up."""
        indices = np.union1d(self.indices, other.indices).astype(np.int64)
        weights = np.zeros(indices.size)
        weights[np.searchsorted(indices, self.indices)] += self.weights
        weights[np.searchsorted(indices, other.indices)] += other.weights
        return SplatSelection(indices, weights)

    def extended(self, indices: ArrayLike) -> SplatSelection:
        """Selection with extra splats added at zero weight."""
        return self.union(SplatSelection(np.asarray(indices, dtype=np.int64), np.zeros(np.size(indices))))

    @classmethod
    def from_weights(cls, weights: FloatArray, w_min: float) -> SplatSelection:
        """Splats whose accumulated weight exceeds ``w_min``."""
        indices = np.flatnonzero(weights > w_min).astype(np.int64)
        return cls(indices, weights[indices])


def sample_nodes(grid: MaskGrid, *, every_frame: bool = False) -> list[tuple[float, float]]:
    """Grid nodes, or every integer time step in the grid's range at each pose."""
    if not every_frame or grid.empty:
        return grid.nodes
    times = np.arange(np.ceil(grid.times[0]), np.floor(grid.times[-1]) + 1)
    return [(float(t), float(p)) for t in times for p in grid.poses]


def accumulate_weights(
    poser: Callable[[float], Scene],
    cameras: Sequence[Camera],
    masks: Iterable[tuple[float, float, NDArray[np.bool_]]],
    *,
    workers: int = 1,
) -> FloatArray:
    """Sum, per splat, the recorded weight falling inside each ``(t, p, mask)``."""
    items = list(masks)

    def work(item: tuple[float, float, NDArray[np.bool_]]) -> FloatArray:
        t, p, mask = item
        scene = poser(t)
        out = render(scene, cameras[int(round(p))])
        return out.records.weight_per_splat(len(scene), mask)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, items))
    else:
        parts = [work(item) for item in items]
    if not parts:
        return np.zeros(0)
    total = np.zeros_like(parts[0])
    for part in parts:
        total = total + part
    return total


def select_splats(  # noqa: PLR0913
    poser: Callable[[float], Scene],
    cameras: Sequence[Camera],
    grid: MaskGrid,
    nodes: Sequence[tuple[float, float]] | None = None,
    w_min: float = DEFAULT_MIN_WEIGHT,
    *,
    threshold: float = DEFAULT_THRESHOLD,
    workers: int = 1,
) -> SplatSelection:
    """Splats whose recorded weight inside the warped masks exceeds ``w_min``.

    ``poser`` returns the world-space scene at a time step; ``cameras`` is
    indexed by the pose coordinate.
    """
    nodes = grid.nodes if nodes is None else list(nodes)
    masks = [(t, p, warp_mask(grid, t, p, threshold).mask) for t, p in nodes]
    weights = accumulate_weights(poser, cameras, masks, workers=workers)
    selection = SplatSelection.from_weights(weights, w_min)
    logger.debug(f"Selected {len(selection)} splats over {len(nodes)} nodes")
    return selection


__all__ = [
    "MaskGrid",
    "SemanticMask",
    "SplatSelection",
    "accumulate_weights",
    "build_mask_grid",
    "interpolate",
    "sample_nodes",
    "select_splats",
    "warp_mask",
]
