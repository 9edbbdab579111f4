"""Adaptive density control.

Splats whose mean screen-space position gradient exceeds a threshold are
cloned when small and split in two when large; low-opacity splats are pruned.
Children inherit label, binding and decoupled flag from their parent.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
from loguru import logger

from . import quaternion

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from .splat import Scene

    FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class DensifyOptions:
    """Thresholds of :func:`densify_and_prune`."""

    grad_threshold: float = 2e-4
    opacity_threshold: float = 0.005
    percent_dense: float = 0.01
    interval: int = 2048
    max_splats: int = 500
    split_factor: float = 1.6
    split_children: int = 2


@dataclass
class DensifyStats:
    """Running screen-space gradient statistics between two densification passes."""

    grad_accum: FloatArray
    denom: FloatArray
    iteration: int = 0

    @classmethod
    def zeros(cls, count: int) -> DensifyStats:
        """Fresh statistics for ``count`` splats."""
        return cls(np.zeros(count), np.zeros(count))

    def __len__(self) -> int:  # noqa: D105
        return int(self.grad_accum.shape[0])

    def update(self, grad_norm: ArrayLike, radii: ArrayLike) -> None:
        """Add one view's screen-space gradient norms for splats with a positive radius."""
        radii = np.asarray(radii, dtype=np.float64)
        visible = radii > 0
        self.grad_accum[visible] += np.asarray(grad_norm, dtype=np.float64)[visible]
        self.denom[visible] += 1
        self.iteration += 1

    def mean_grad(self) -> FloatArray:
        """Mean gradient norm per splat; 0 for splats never seen."""
        return np.divide(self.grad_accum, self.denom, out=np.zeros_like(self.grad_accum), where=self.denom > 0)


class DensifyResult(NamedTuple):
    """Outcome of one :func:`densify_and_prune` call.

    ``source[i]`` is the index of the splat ``i`` was derived from; ``children``
    marks newly created splats.
    """

    scene: Scene
    source: NDArray[np.int64]
    children: NDArray[np.bool_]
    stats: DensifyStats


def densify_and_prune(
    scene: Scene,
    stats: DensifyStats,
    options: DensifyOptions,
    extent: float,
    rng: np.random.Generator,
) -> DensifyResult:
    """Clone, split and prune ``scene`` from ``stats``; the returned statistics are reset.

    The densified set is capped so that the result never holds more than
    ``options.max_splats`` splats; the highest gradients are served first.
    """
    n = len(scene)
    grads = stats.mean_grad()
    keep = scene.opacity >= options.opacity_threshold
    if np.count_nonzero(keep) > options.max_splats:
        ranked = np.flatnonzero(keep)[np.argsort(-scene.opacity[keep], kind="stable")]
        keep = np.zeros(n, dtype=np.bool_)
        keep[ranked[: options.max_splats]] = True

    candidates = np.flatnonzero(keep & (grads > options.grad_threshold))
    budget = max(options.max_splats - int(np.count_nonzero(keep)), 0)
    if candidates.size > budget:
        candidates = candidates[np.argsort(-grads[candidates], kind="stable")[:budget]]
        candidates.sort()
    large = scene.s.max(axis=1) > options.percent_dense * extent
    clone = candidates[~large[candidates]]
    split = candidates[large[candidates]]

    survivors = np.flatnonzero(keep & ~np.isin(np.arange(n), split))
    split_rows = np.repeat(split, options.split_children)
    source = np.concatenate([survivors, clone, split_rows]).astype(np.int64)
    children = np.concatenate([np.zeros(survivors.size, dtype=np.bool_), np.ones(clone.size + split_rows.size, dtype=np.bool_)])
    out = scene.take(source)

    if split_rows.size:
        out = _split_children(out, np.arange(survivors.size + clone.size, len(source)), options.split_factor, rng)

    logger.info(
        f"Densify at step {stats.iteration}: cloned {clone.size}, split {split.size}, pruned {n - int(np.count_nonzero(keep))},"
        f" {len(out)} splats",
    )
    return DensifyResult(out, source, children, DensifyStats.zeros(len(out)))


def _split_children(scene: Scene, rows: NDArray[np.int64], factor: float, rng: np.random.Generator) -> Scene:
    """Jitter split children inside their parent's footprint and shrink them."""
    columns = {name: column.copy() for name, column in scene.columns().items()}
    z = rng.standard_normal((rows.size, 3))
    world_step = np.einsum("nij,nj->ni", quaternion.to_matrix(scene.q[rows]), scene.s[rows] * z)
    columns["mu"][rows] += world_step
    columns["s"][rows] /= factor
    posable = rows[scene.posable[rows]]
    if posable.size:
        # Same displacement expressed in the binding frame: k0 R_local (s_local * z).
        zb = z[scene.posable[rows]]
        local = quaternion.to_matrix(quaternion.normalize(scene.local_rotation[posable]))
        step = scene.bind_scale[posable, None] * np.einsum("nij,nj->ni", local, scene.local_scale[posable] * zb)
        columns["offset"][posable] += step
        columns["rest_offset"][posable] = columns["offset"][posable]
        columns["local_scale"][posable] /= factor
    return scene.replace(**columns)


__all__ = ["DensifyOptions", "DensifyResult", "DensifyStats", "densify_and_prune"]
