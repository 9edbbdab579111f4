"""Analytic reverse pass through posing, projection and compositing.

The forward quantities are recomputed tile by tile with the same routine the
renderer uses, so forward and reverse always agree on contributor order and
early termination. For contributor ``i`` of a pixel with weight
``w_i = a_i T_i``:

    g_i       = dL/dw_i + c_i . dL/dC
    dL/da_i   = g_i T_i - (sum_{k>i} g_k w_k) / (1 - a_i)

and the result is chained through the screen-space Gaussian, the projected
covariance and the camera transform back to world position, rotation, log scale,
opacity and color, then through posing and the parameter transforms
(normalisation, exp, logistic, color clamp) to a :class:`ParamVector` gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np

from . import quaternion
from .exceptions import BindingError, NonFiniteError
from .losses import (
    GradientMagnitudeProxy,
    LossWeights,
    edit_weights,
    gs_anchor_gradient,
    gs_anchor_loss,
    label_cross_entropy,
    label_cross_entropy_gradient,
    rgb_loss,
    rgb_loss_gradient,
    tracking_offset_term,
)
from .renderer import SIGMA_CUTOFF, project_scene, rasterize_tile, render, tile_lists
from .rig import pose_frame, pose_splats
from .splat import unpack_params

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

    from .camera import Camera
    from .losses import PerceptualMetric
    from .renderer import RenderOutput
    from .rig import MeshFrame, PoseFrame
    from .splat import ParamVector, Scene

    FloatArray = NDArray[np.float64]

EDIT_LAMBDA_RGB = 0.7


class Stage(StrEnum):
    """Training stage; selects the loss combination."""

    MODELING = "modeling"
    EDITING = "editing"


@dataclass(frozen=True, eq=False)
class View:
    """One supervised sample: a camera, its target image and the mesh posing the scene."""

    camera: Camera
    target: FloatArray
    mesh: MeshFrame | None = None
    labels: NDArray[np.int64] | None = None
    time: float = 0.0


@dataclass(frozen=True, eq=False)
class SplatGradients:
    """Loss derivatives with respect to world-space splat parameters.

    ``rotation`` is taken with respect to the unit world quaternion, ``log_scale``
    with respect to the logarithm of the world scale.
    """

    mu: FloatArray
    rotation: FloatArray
    log_scale: FloatArray
    opacity: FloatArray
    color: FloatArray
    mean2d: FloatArray

    @classmethod
    def zeros(cls, count: int) -> SplatGradients:  # noqa: D102
        return cls(
            np.zeros((count, 3)), np.zeros((count, 4)), np.zeros((count, 3)),
            np.zeros(count), np.zeros((count, 3)), np.zeros((count, 2)),
        )


def render_backward(  # noqa: PLR0915
    scene: Scene,
    cam: Camera,
    grad_color: ArrayLike,
    grad_label_mass: ArrayLike | None = None,
    *,
    sigma_cutoff: float | None = SIGMA_CUTOFF,
) -> SplatGradients:
    """Pull image-space derivatives back to the world parameters of ``scene``.

    ``grad_color`` is ``dL/dC`` with shape ``(H, W, 3)``; ``grad_label_mass`` is
    ``dL/dM`` for the per-label weight mass, shape ``(H, W, L)``.
    """
    n = len(scene)
    out = SplatGradients.zeros(n)
    if n == 0:
        return out
    proj = project_scene(scene, cam)
    g_color = np.asarray(grad_color, dtype=np.float64).reshape(-1, 3)
    g_mass = None if grad_label_mass is None else np.asarray(grad_label_mass, dtype=np.float64)
    if g_mass is not None:
        g_mass = g_mass.reshape(-1, g_mass.shape[-1])

    d_mean = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))
    for splats, pixels in tile_lists(proj, cam, sigma_cutoff):
        if splats.size == 0:
            continue
        r = rasterize_tile(proj, scene.opacity, splats, pixels, cam.width, sigma_cutoff)
        g_pix = g_color[pixels]
        g = scene.color[splats] @ g_pix.T
        if g_mass is not None:
            labels = scene.label[splats]
            in_range = labels < g_mass.shape[1]
            g[in_range] += g_mass[pixels][:, labels[in_range]].T
        gw = g * r.weights
        later = np.cumsum(gw[::-1], axis=0)[::-1] - gw
        d_alpha = np.where(r.included, g * r.t_before - later / (1.0 - r.alpha), 0.0)
        d_raw = d_alpha * r.unclamped * r.inside
        out.opacity[splats] += np.sum(d_raw * r.gauss, axis=1)
        out.color[splats] += r.weights @ g_pix
        d_power = d_raw * scene.opacity[splats, None] * r.gauss

        px = np.stack([pixels % cam.width, pixels // cam.width], axis=1).astype(np.float64)
        dx = px[None, :, 0] - proj.mean2d[splats, 0, None]
        dy = px[None, :, 1] - proj.mean2d[splats, 1, None]
        conic = proj.conic[splats]
        a, b, c = conic[:, 0, 0, None], conic[:, 0, 1, None], conic[:, 1, 1, None]
        d_mean[splats, 0] += np.sum(d_power * (a * dx + b * dy), axis=1)
        d_mean[splats, 1] += np.sum(d_power * (b * dx + c * dy), axis=1)
        d_conic[splats, 0] += np.sum(d_power * -0.5 * dx * dx, axis=1)
        d_conic[splats, 1] += np.sum(d_power * -dx * dy, axis=1)
        d_conic[splats, 2] += np.sum(d_power * -0.5 * dy * dy, axis=1)

    vis = np.flatnonzero(proj.visible)
    q_mat = proj.conic[vis]
    g_q = np.empty((vis.size, 2, 2))
    g_q[:, 0, 0] = d_conic[vis, 0]
    g_q[:, 0, 1] = g_q[:, 1, 0] = 0.5 * d_conic[vis, 1]
    g_q[:, 1, 1] = d_conic[vis, 2]
    g_cov2d = -q_mat @ g_q @ q_mat

    jac = proj.jacobian[vis]
    cov_cam = proj.cov_cam[vis]
    g_cov_cam = np.swapaxes(jac, 1, 2) @ g_cov2d @ jac
    g_jac = 2.0 * g_cov2d @ jac @ cov_cam

    x, y, z = proj.cam_points[vis].T
    g_t = np.einsum("nij,ni->nj", jac, d_mean[vis])
    g_t[:, 0] += g_jac[:, 0, 2] * -cam.fx / z**2
    g_t[:, 1] += g_jac[:, 1, 2] * -cam.fy / z**2
    g_t[:, 2] += (
        g_jac[:, 0, 0] * -cam.fx / z**2
        + g_jac[:, 0, 2] * 2 * cam.fx * x / z**3
        + g_jac[:, 1, 1] * -cam.fy / z**2
        + g_jac[:, 1, 2] * 2 * cam.fy * y / z**3
    )
    w = cam.rotation
    out.mu[vis] = g_t @ w

    g_sigma = w.T @ g_cov_cam @ w
    unit_q = quaternion.normalize(scene.q[vis])
    rot = quaternion.to_matrix(unit_q)
    s2 = scene.s[vis] ** 2
    g_rot = 2.0 * g_sigma @ rot * s2[:, None, :]
    out.rotation[vis] = quaternion.matrix_gradient(unit_q, g_rot)
    out.log_scale[vis] = 2.0 * s2 * np.einsum("nji,njk,nki->ni", rot, g_sigma, rot)
    out.mean2d[vis] = d_mean[vis]
    return out


def pull_back(vector: ParamVector, scene: Scene, grads: SplatGradients, frame: PoseFrame | None) -> FloatArray:
    """Map world-parameter derivatives to the flat values of ``vector``.

    ``scene`` is ``unpack_params(vector).scene``; ``frame`` holds the triangle
    quantities the posable splats were posed with.
    """
    layout = vector.layout
    n = len(scene)
    blocks = np.zeros((n, layout.width))
    raw_q = vector.field("q")
    posable = scene.posable
    if np.any(posable) and frame is None:
        msg = "Scene has mesh-bound splats but no mesh was given to pose them."
        raise BindingError(msg)

    free = np.flatnonzero(~posable)
    blocks[free, layout.slot("mu")] = grads.mu[free]
    blocks[free, layout.slot("q")] = quaternion.normalize_gradient(raw_q[free], grads.rotation[free])
    if frame is not None and frame.indices.size:
        idx = frame.indices
        blocks[idx, layout.slot("mu")] = frame.ratio[:, None] * np.einsum("nji,nj->ni", frame.rotation, grads.mu[idx])
        g_local = np.einsum("nji,nj->ni", quaternion.left_matrix(frame.q_tri), grads.rotation[idx])
        blocks[idx, layout.slot("q")] = quaternion.normalize_gradient(raw_q[idx], g_local)
    blocks[:, layout.slot("log_s")] = grads.log_scale
    opacity = scene.opacity
    blocks[:, layout.slot("logit_opacity")] = (grads.opacity * opacity * (1.0 - opacity))[:, None]
    raw_color = vector.field("color")
    blocks[:, layout.slot("color")] = grads.color * ((raw_color >= 0.0) & (raw_color <= 1.0))
    return blocks.reshape(-1)


def tracking_offset_gradient(vector: ParamVector, scene: Scene) -> FloatArray:
    """Derivative of the offset drift term with respect to the flat values of ``vector``."""
    blocks = np.zeros((len(scene), vector.layout.width))
    posable = np.flatnonzero(scene.posable)
    if posable.size:
        drift = scene.offset[posable] - scene.rest_offset[posable]
        blocks[posable, vector.layout.slot("mu")] = 2.0 * drift / posable.size
    return blocks.reshape(-1)


@dataclass(frozen=True)
class ObjectiveConfig:
    """Loss configuration of :func:`evaluate`.

    In the editing stage ``reference`` is the pre-edit parameter vector and
    ``free`` the edit-selected splats. The adversarial term is added by the
    training loop.
    """

    stage: Stage = Stage.MODELING
    weights: LossWeights = field(default_factory=LossWeights)
    perceptual: PerceptualMetric | None = None
    reference: ParamVector | None = None
    free: NDArray[np.int64] | None = None
    sigma_cutoff: float | None = SIGMA_CUTOFF

    @property
    def lambda_rgb(self) -> float:
        """Color loss blend of the stage."""
        return self.weights.lambda_rgb if self.stage is Stage.MODELING else EDIT_LAMBDA_RGB


@dataclass(frozen=True, eq=False)
class Evaluation:
    """Loss value, named terms, gradient and per-view screen statistics."""

    loss: float
    terms: dict[str, float]
    gradient: FloatArray
    renders: list[RenderOutput]
    screen_grad: list[FloatArray]


def posed(scene: Scene, view: View) -> tuple[Scene, PoseFrame | None]:
    """World-space scene for ``view`` and the pose frame used."""
    if view.mesh is None:
        return scene, None
    return pose_splats(scene, view.mesh), pose_frame(scene, view.mesh)


def image_backward(
    vector: ParamVector,
    scene: Scene,
    view: View,
    grad_color: ArrayLike,
    grad_label_mass: ArrayLike | None = None,
    *,
    sigma_cutoff: float | None = SIGMA_CUTOFF,
) -> tuple[FloatArray, FloatArray]:
    """Flat parameter gradient of an image-space derivative for one view, plus screen gradients."""
    world, frame = posed(scene, view)
    grads = render_backward(world, view.camera, grad_color, grad_label_mass, sigma_cutoff=sigma_cutoff)
    return pull_back(vector, scene, grads, frame), grads.mean2d


def evaluate(  # noqa: C901
    vector: ParamVector, views: Sequence[View], config: ObjectiveConfig, *, gradient: bool = True,
) -> Evaluation:
    """Total loss of ``vector`` over ``views`` and, unless disabled, its analytic gradient.

    Modeling: ``lambda_rec * rgb + (1 - lambda_rec) * tracking``, where rgb and
    label cross-entropy are averaged over views. Editing: the normalised edit
    blend of rgb and anchoring.
    """
    scene = unpack_params(vector).scene
    weights = config.weights
    perceptual = config.perceptual or GradientMagnitudeProxy()
    lam_rgb = config.lambda_rgb
    count = max(len(views), 1)
    if config.stage is Stage.MODELING:
        rgb_coef = weights.lambda_rec
        ce_coef = (1.0 - weights.lambda_rec) * (1.0 - weights.lambda_track)
        w_anchor = 0.0
    else:
        w_rgb, w_anchor, _ = edit_weights(weights.edit)
        rgb_coef, ce_coef = w_rgb, 0.0

    total_grad = np.zeros(len(vector))
    rgb_sum = ce_sum = 0.0
    renders, screen = [], []
    for view in views:
        world, frame = posed(scene, view)
        out = render(world, view.camera, sigma_cutoff=config.sigma_cutoff)
        renders.append(out)
        rgb_sum += rgb_loss(out.color, view.target, lam_rgb, perceptual)
        use_labels = ce_coef > 0 and view.labels is not None
        if use_labels:
            ce_sum += label_cross_entropy(out.label_mass, view.labels)
        if not gradient:
            continue
        g_color = rgb_coef / count * rgb_loss_gradient(out.color, view.target, lam_rgb, perceptual)
        g_mass = ce_coef / count * label_cross_entropy_gradient(out.label_mass, view.labels) if use_labels else None
        grads = render_backward(world, view.camera, g_color, g_mass, sigma_cutoff=config.sigma_cutoff)
        total_grad += pull_back(vector, scene, grads, frame)
        screen.append(np.linalg.norm(grads.mean2d, axis=1))

    terms = {"rgb": rgb_sum / count}
    if config.stage is Stage.MODELING:
        offset = tracking_offset_term(scene)
        terms["label_ce"] = ce_sum / count
        terms["tracking"] = weights.lambda_track * offset + (1.0 - weights.lambda_track) * terms["label_ce"]
        loss = weights.lambda_rec * terms["rgb"] + (1.0 - weights.lambda_rec) * terms["tracking"]
        if gradient and weights.lambda_rec < 1.0:
            total_grad += (1.0 - weights.lambda_rec) * weights.lambda_track * tracking_offset_gradient(vector, scene)
    else:
        reference = config.reference if config.reference is not None else vector
        terms["anchor"] = gs_anchor_loss(vector, reference, weights.anchor, config.free)
        loss = rgb_coef * terms["rgb"] + w_anchor * terms["anchor"]
        if gradient:
            total_grad += w_anchor * gs_anchor_gradient(vector, reference, weights.anchor, config.free)

    check_finite(loss, total_grad, vector.layout.width)
    return Evaluation(loss, terms, total_grad, renders, screen)


def check_finite(loss: float, grad: FloatArray, width: int) -> None:
    """Raise :class:`NonFiniteError` naming the first splat with a non-finite gradient."""
    if not np.isfinite(loss):
        msg = f"Loss is not finite ({loss})."
        raise NonFiniteError(msg)
    bad = ~np.isfinite(grad)
    if np.any(bad):
        splat = int(np.flatnonzero(bad)[0] // width)
        msg = f"Gradient is not finite for splat {splat}."
        raise NonFiniteError(msg, splat_index=splat)


def backward(vector: ParamVector, views: Sequence[View], config: ObjectiveConfig | None = None) -> ParamVector:
    """Analytic gradient of the configured loss, laid out like ``vector``."""
    evaluation = evaluate(vector, views, config or ObjectiveConfig())
    return vector.with_values(evaluation.gradient)


__all__ = [
    "EDIT_LAMBDA_RGB",
    "Evaluation",
    "ObjectiveConfig",
    "SplatGradients",
    "Stage",
    "View",
    "backward",
    "check_finite",
    "evaluate",
    "image_backward",
    "posed",
    "pull_back",
    "render_backward",
    "tracking_offset_gradient",
]
