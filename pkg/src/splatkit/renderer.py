"""Tile based splat rasterizer.

Splats are projected with the local affine approximation of the perspective
map, sorted front to back and alpha composited per pixel:

    C = sum_i c_i a_i prod_{j<i} (1 - a_j)

Each 16x16 tile only evaluates the splats whose screen-space ellipse bounding
box touches it. :func:`render_naive` evaluates every splat at every pixel and is
the reference the tiled path is tested against.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
from loguru import logger

from .exceptions import InvalidParameterError
from .splat import GaussianSplat, Scene, covariance_matrices

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from numpy.typing import ArrayLike, NDArray

    from .camera import Camera

    FloatArray = NDArray[np.float64]
    IntArray = NDArray[np.int64]

NEAR_PLANE = 0.01
LOW_PASS = 0.3
DET_FLOOR = 1e-12
ALPHA_MAX = 0.999
TRANSMITTANCE_FLOOR = 1e-4
RECORD_FLOOR = 1e-3
TILE = 16
SIGMA_CUTOFF = 3.0
_BOX_MARGIN = 1e-9


@dataclass(frozen=True)
class Splat2D:
    """A splat on screen."""

    mean2d: tuple[float, float]
    cov2d: tuple[tuple[float, float], tuple[float, float]]
    depth: float
    index: int


@dataclass(frozen=True, eq=False)
class Projection:
    """Vectorised projection of a whole scene into one camera.

    Rows of splats that are culled (behind the near plane) or degenerate hold
    placeholder values and are excluded by :attr:`visible`.
    """

    cam_points: FloatArray
    jacobian: FloatArray
    cov_cam: FloatArray
    mean2d: FloatArray
    cov2d: FloatArray
    conic: FloatArray
    depth: FloatArray
    visible: NDArray[np.bool_]
    culled: int
    degenerate: int

    @property
    def radii(self) -> FloatArray:
        """Three-sigma screen radius of every visible splat, 0 elsewhere."""
        a, b, c = self.cov2d[:, 0, 0], self.cov2d[:, 0, 1], self.cov2d[:, 1, 1]
        mid = 0.5 * (a + c)
        largest = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
        return np.where(self.visible, SIGMA_CUTOFF * np.sqrt(np.maximum(largest, 0.0)), 0.0)

    def order(self) -> IntArray:
        """Visible splat indices front to back; ties keep scene order."""
        idx = np.flatnonzero(self.visible)
        return idx[np.lexsort((idx, self.depth[idx]))]


def project_scene(scene: Scene, cam: Camera) -> Projection:
    """Project every splat of ``scene`` into ``cam``."""
    n = len(scene)
    t = cam.to_camera(scene.mu) if n else np.zeros((0, 3))
    z = t[:, 2]
    in_front = z > NEAR_PLANE
    safe_z = np.where(in_front, z, 1.0)
    x, y = t[:, 0], t[:, 1]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / safe_z
    jac[:, 0, 2] = -cam.fx * x / safe_z**2
    jac[:, 1, 1] = cam.fy / safe_z
    jac[:, 1, 2] = -cam.fy * y / safe_z**2
    sigma = covariance_matrices(scene.q, scene.s) if n else np.zeros((0, 3, 3))
    w = cam.rotation
    cov_cam = w @ sigma @ w.T
    cov2d = jac @ cov_cam @ np.swapaxes(jac, 1, 2) + LOW_PASS * np.eye(2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    well_posed = det >= DET_FLOOR
    safe_det = np.where(well_posed, det, 1.0)
    conic = np.empty_like(cov2d)
    conic[:, 0, 0] = cov2d[:, 1, 1] / safe_det
    conic[:, 1, 1] = cov2d[:, 0, 0] / safe_det
    conic[:, 0, 1] = conic[:, 1, 0] = -cov2d[:, 0, 1] / safe_det
    mean2d = np.stack([cam.fx * x / safe_z + cam.cx, cam.fy * y / safe_z + cam.cy], axis=1)
    degenerate = in_front & ~well_posed
    culled = int(np.count_nonzero(~in_front))
    if culled or np.any(degenerate):
        logger.debug(f"Projection: {culled} splats behind the near plane, {int(degenerate.sum())} degenerate")
    return Projection(
        cam_points=t,
        jacobian=jac,
        cov_cam=cov_cam,
        mean2d=mean2d,
        cov2d=cov2d,
        conic=conic,
        depth=z,
        visible=in_front & well_posed,
        culled=culled,
        degenerate=int(np.count_nonzero(degenerate)),
    )


def project_splat(splat: GaussianSplat, cam: Camera, index: int = 0) -> Splat2D | None:
    """Screen-space footprint of ``splat``, or ``None`` when it is behind the near plane."""
    proj = project_scene(Scene.from_splats([splat]), cam)
    if not proj.visible[0]:
        return None
    cov = proj.cov2d[0]
    return Splat2D(
        mean2d=(float(proj.mean2d[0, 0]), float(proj.mean2d[0, 1])),
        cov2d=((float(cov[0, 0]), float(cov[0, 1])), (float(cov[1, 0]), float(cov[1, 1]))),
        depth=float(proj.depth[0]),
        index=index,
    )


def depth_sort(splats2d: Sequence[Splat2D]) -> list[int]:
    """Positions of ``splats2d`` ordered by depth, ties broken by source index."""
    return sorted(range(len(splats2d)), key=lambda i: (splats2d[i].depth, splats2d[i].index))


def composite_pixel(contribs: Iterable[tuple[ArrayLike, float]]) -> tuple[FloatArray, list[float]]:
    """Front-to-back compositing of ``(color, alpha)`` pairs for one pixel.

    Stops before the first contributor that sees a transmittance below ``1e-4``.
    """
    color = np.zeros(3)
    weights: list[float] = []
    transmittance = 1.0
    for c, alpha in contribs:
        if transmittance < TRANSMITTANCE_FLOOR:
            break
        weight = alpha * transmittance
        color = color + weight * np.asarray(c, dtype=np.float64)
        weights.append(weight)
        transmittance *= 1.0 - alpha
    return color, weights


class TileRaster(NamedTuple):
    """Per tile intermediates, indexed ``[contributor, pixel]``."""

    splats: IntArray
    pixels: IntArray
    gauss: FloatArray
    inside: NDArray[np.bool_]
    unclamped: NDArray[np.bool_]
    alpha: FloatArray
    t_before: FloatArray
    included: NDArray[np.bool_]
    weights: FloatArray
    t_final: FloatArray


def rasterize_tile(
    proj: Projection,
    opacity: FloatArray,
    splats: IntArray,
    pixels: IntArray,
    width: int,
    sigma_cutoff: float | None,
) -> TileRaster:
    """Alphas, transmittances and weights of depth-ordered ``splats`` over flat ``pixels``."""
    px = np.stack([pixels % width, pixels // width], axis=1).astype(np.float64)
    d = px[None, :, :] - proj.mean2d[splats][:, None, :]
    conic = proj.conic[splats]
    a, b, c = conic[:, 0, 0, None], conic[:, 0, 1, None], conic[:, 1, 1, None]
    mahalanobis = a * d[..., 0] ** 2 + 2 * b * d[..., 0] * d[..., 1] + c * d[..., 1] ** 2
    gauss = np.exp(-0.5 * mahalanobis)
    if sigma_cutoff is None:
        inside = np.ones_like(gauss, dtype=np.bool_)
    else:
        inside = mahalanobis <= sigma_cutoff * sigma_cutoff
    raw = opacity[splats, None] * gauss * inside
    unclamped = raw < ALPHA_MAX
    alpha = np.where(unclamped, raw, ALPHA_MAX)
    survive = 1.0 - alpha
    t_before = np.ones_like(alpha)
    if len(splats) > 1:
        t_before[1:] = np.cumprod(survive[:-1], axis=0)
    included = t_before >= TRANSMITTANCE_FLOOR
    weights = np.where(included, alpha * t_before, 0.0)
    t_final = np.prod(np.where(included, survive, 1.0), axis=0)
    return TileRaster(splats, pixels, gauss, inside, unclamped, alpha, t_before, included, weights, t_final)


@dataclass(frozen=True)
class RenderDiagnostics:
    """Counts of splats left out of a render."""

    culled: int = 0
    degenerate: int = 0
    visible: int = 0


@dataclass(frozen=True, eq=False)
class ContributionRecords:
    """Per-pixel ``(splat, weight)`` pairs above the record floor, as flat parallel arrays."""

    pixel: IntArray
    splat: IntArray
    weight: FloatArray
    width: int
    height: int

    def for_pixel(self, x: int, y: int) -> list[tuple[int, float]]:
        """Contributors of pixel ``(x, y)`` front to back."""
        rows = np.flatnonzero(self.pixel == y * self.width + x)
        return [(int(self.splat[r]), float(self.weight[r])) for r in rows]

    def weight_per_splat(self, count: int, mask: NDArray[np.bool_] | None = None) -> FloatArray:
        """Summed weight of every splat, optionally only over pixels where ``mask`` is true."""
        keep = np.ones_like(self.pixel, dtype=np.bool_) if mask is None else mask.reshape(-1)[self.pixel]
        return np.bincount(self.splat[keep], weights=self.weight[keep], minlength=count)[:count]


@dataclass(frozen=True, eq=False)
class RenderOutput:
    """Image, label map and contribution records of one render.

    ``label_mass[y, x, l]`` is the summed weight of every contributor with label
    ``l`` (no record floor); it feeds the soft label prediction.
    """

    color: FloatArray
    labels: IntArray
    winner: IntArray
    transmittance: FloatArray
    label_mass: FloatArray
    records: ContributionRecords
    radii: FloatArray
    diagnostics: RenderDiagnostics = field(default_factory=RenderDiagnostics)

    @property
    def weight_sum(self) -> FloatArray:
        """Total contributor weight per pixel."""
        return self.label_mass.sum(axis=2)


def _tile_pixels(cam: Camera) -> list[tuple[int, int, IntArray]]:
    tiles = []
    for ty in range(math.ceil(cam.height / TILE)):
        for tx in range(math.ceil(cam.width / TILE)):
            ys = np.arange(ty * TILE, min((ty + 1) * TILE, cam.height))
            xs = np.arange(tx * TILE, min((tx + 1) * TILE, cam.width))
            pixels = (ys[:, None] * cam.width + xs[None, :]).reshape(-1)
            tiles.append((tx, ty, pixels))
    return tiles


def tile_lists(proj: Projection, cam: Camera, sigma_cutoff: float | None) -> list[tuple[IntArray, IntArray]]:
    """``(splats, pixels)`` per tile; splats front to back, limited to those whose ellipse box touches the tile."""
    order = proj.order()
    tiles = _tile_pixels(cam)
    if sigma_cutoff is None:
        return [(order, pixels) for _, _, pixels in tiles]
    mean = proj.mean2d[order]
    half_x = sigma_cutoff * np.sqrt(proj.cov2d[order, 0, 0]) + _BOX_MARGIN
    half_y = sigma_cutoff * np.sqrt(proj.cov2d[order, 1, 1]) + _BOX_MARGIN
    lo_x, hi_x = np.floor((mean[:, 0] - half_x) / TILE), np.floor((mean[:, 0] + half_x) / TILE)
    lo_y, hi_y = np.floor((mean[:, 1] - half_y) / TILE), np.floor((mean[:, 1] + half_y) / TILE)
    lists = []
    for tx, ty, pixels in tiles:
        touches = (lo_x <= tx) & (tx <= hi_x) & (lo_y <= ty) & (ty <= hi_y)
        lists.append((order[touches], pixels))
    return lists


def _as_scene(scene: Scene | Sequence[GaussianSplat]) -> Scene:
    return scene if isinstance(scene, Scene) else Scene.from_splats(scene)


def render(
    scene: Scene | Sequence[GaussianSplat],
    cam: Camera,
    *,
    sigma_cutoff: float | None = SIGMA_CUTOFF,
    workers: int = 1,
) -> RenderOutput:
    """Composite ``scene`` as seen from ``cam`` on a black background.

    ``sigma_cutoff=None`` evaluates every splat over the whole frame. Tiles are
    independent and may be rasterized on ``workers`` threads; results are merged
    in tile order.
    """
    scene = _as_scene(scene)
    proj = project_scene(scene, cam)
    n_labels = int(scene.label.max()) + 1 if len(scene) else 1
    label_onehot = np.eye(n_labels)[scene.label] if len(scene) else np.zeros((0, 1))
    tiles = tile_lists(proj, cam, sigma_cutoff)

    def work(item: tuple[IntArray, IntArray]) -> TileRaster:
        splats, pixels = item
        return rasterize_tile(proj, scene.opacity, splats, pixels, cam.width, sigma_cutoff)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rasters = list(pool.map(work, tiles))
    else:
        rasters = [work(item) for item in tiles]

    n_pixels = cam.width * cam.height
    color = np.zeros((n_pixels, 3))
    transmittance = np.ones(n_pixels)
    winner = np.full(n_pixels, -1, dtype=np.int64)
    label_mass = np.zeros((n_pixels, n_labels))
    rec_pixel, rec_splat, rec_weight = [], [], []
    for r in rasters:
        if len(r.splats) == 0:
            continue
        color[r.pixels] = r.weights.T @ scene.color[r.splats]
        transmittance[r.pixels] = r.t_final
        label_mass[r.pixels] = r.weights.T @ label_onehot[r.splats]
        recorded = r.weights >= RECORD_FLOOR
        p_idx, k_idx = np.nonzero(recorded.T)
        rec_pixel.append(r.pixels[p_idx])
        rec_splat.append(r.splats[k_idx])
        rec_weight.append(r.weights[k_idx, p_idx])
        best = np.argmax(np.where(recorded, r.weights, -1.0), axis=0)
        has = recorded.any(axis=0)
        winner[r.pixels[has]] = r.splats[best[has]]

    labels = np.where(winner >= 0, scene.label[np.maximum(winner, 0)] if len(scene) else 0, 0)
    records = ContributionRecords(
        pixel=np.concatenate(rec_pixel) if rec_pixel else np.zeros(0, dtype=np.int64),
        splat=np.concatenate(rec_splat) if rec_splat else np.zeros(0, dtype=np.int64),
        weight=np.concatenate(rec_weight) if rec_weight else np.zeros(0),
        width=cam.width,
        height=cam.height,
    )
    h, w = cam.height, cam.width
    return RenderOutput(
        color=color.reshape(h, w, 3),
        labels=labels.reshape(h, w).astype(np.int64),
        winner=winner.reshape(h, w),
        transmittance=transmittance.reshape(h, w),
        label_mass=label_mass.reshape(h, w, n_labels),
        records=records,
        radii=proj.radii,
        diagnostics=RenderDiagnostics(proj.culled, proj.degenerate, int(np.count_nonzero(proj.visible))),
    )


def render_naive(
    scene: Scene | Sequence[GaussianSplat],
    cam: Camera,
    *,
    sigma_cutoff: float | None = SIGMA_CUTOFF,
) -> tuple[FloatArray, IntArray]:
    """Per-pixel reference renderer without tiling; returns ``(color, label map)``."""
    scene = _as_scene(scene)
    proj = project_scene(scene, cam)
    splats2d = [
        Splat2D(tuple(proj.mean2d[i]), tuple(map(tuple, proj.cov2d[i])), float(proj.depth[i]), int(i))  # type: ignore[arg-type]
        for i in np.flatnonzero(proj.visible)
    ]
    ordered = [splats2d[k] for k in depth_sort(splats2d)]
    color = np.zeros((cam.height, cam.width, 3))
    labels = np.zeros((cam.height, cam.width), dtype=np.int64)
    for y in range(cam.height):
        for x in range(cam.width):
            contribs = []
            for sp in ordered:
                d = np.array([x, y], dtype=np.float64) - np.asarray(sp.mean2d)
                mahalanobis = float(d @ np.linalg.solve(np.asarray(sp.cov2d), d))
                if sigma_cutoff is not None and mahalanobis > sigma_cutoff**2:
                    contribs.append((scene.color[sp.index], 0.0))
                    continue
                alpha = min(scene.opacity[sp.index] * math.exp(-0.5 * mahalanobis), ALPHA_MAX)
                contribs.append((scene.color[sp.index], alpha))
            color[y, x], weights = composite_pixel(contribs)
            if weights and max(weights) >= RECORD_FLOOR:
                labels[y, x] = scene.label[ordered[int(np.argmax(weights))].index]
    return color, labels


def render_label_mask(scene: Scene | Sequence[GaussianSplat], cam: Camera, target_label: int) -> NDArray[np.bool_]:
    """Pixels whose max-weight contributor carries ``target_label``."""
    if target_label <= 0:
        msg = f"Target label must be > 0, got {target_label}."
        raise InvalidParameterError(msg)
    return render(scene, cam).labels == target_label


__all__ = [
    "ContributionRecords",
    "Projection",
    "RenderDiagnostics",
    "RenderOutput",
    "Splat2D",
    "TileRaster",
    "composite_pixel",
    "depth_sort",
    "project_scene",
    "project_splat",
    "rasterize_tile",
    "render",
    "render_label_mask",
    "render_naive",
    "tile_lists",
]
