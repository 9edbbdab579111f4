"""Loss suite with analytic derivatives.

Every loss ``foo`` that feeds the optimiser has a companion ``foo_gradient``
returning the derivative with respect to its differentiable input (rendered
image, label mass or parameter vector). The reverse pass through the renderer
lives in :mod:`splatkit.gradients`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Protocol, runtime_checkable

import numpy as np

from . import quaternion
from .exceptions import AlignmentError, DimensionMismatchError, InvalidWeightsError
from .splat import ParamVector, pack_params

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from .splat import Scene

    FloatArray = NDArray[np.float64]

LABEL_EPS = 1e-6
MASS_FLOOR = 1e-12
FREE_SET_FACTOR = 0.01
_MAGNITUDE_EPS = 1e-12


@dataclass(frozen=True)
class AnchorWeights:
    """Per-property weights of :func:`gs_anchor_loss`."""

    position: float = 1.0
    transform: float = 1.0
    color: float = 1.0


@dataclass(frozen=True)
class LossWeights:
    """Every loss weight of both training stages."""

    lambda_rgb: float = 0.9
    lambda_track: float = 0.5
    lambda_rec: float = 0.8
    anchor: AnchorWeights = field(default_factory=AnchorWeights)
    edit: tuple[float, float, float] = (1.0, 1.0, 0.1)

    def __post_init__(self) -> None:  # noqa: D105
        for name in ("lambda_rgb", "lambda_track", "lambda_rec"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                msg = f"{name} must be in [0, 1], got {value}."
                raise InvalidWeightsError(msg)
        anchor = (self.anchor.position, self.anchor.transform, self.anchor.color)
        if min(anchor) < 0 or min(self.edit) < 0:
            msg = "Loss weights must be >= 0."
            raise InvalidWeightsError(msg)
        if sum(self.edit) <= 0:
            msg = "Edit weights must not all be zero."
            raise InvalidWeightsError(msg)


def _check_images(a: ArrayLike, b: ArrayLike) -> tuple[FloatArray, FloatArray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        msg = f"Image shapes differ: {a.shape} vs {b.shape}."
        raise DimensionMismatchError(msg)
    return a, b


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        msg = f"Blend weight must be in [0, 1], got {lam}."
        raise InvalidWeightsError(msg)


def mse(rendered: ArrayLike, target: ArrayLike) -> float:
    """Mean squared error over every pixel and channel."""
    r, t = _check_images(rendered, target)
    return float(np.mean((r - t) ** 2))


def mse_gradient(rendered: ArrayLike, target: ArrayLike) -> FloatArray:
    """Derivative of :func:`mse` with respect to ``rendered``."""
    r, t = _check_images(rendered, target)
    return 2.0 * (r - t) / r.size


@runtime_checkable
class PerceptualMetric(Protocol):
    """Differentiable image distance used by the color loss."""

    def value(self, rendered: FloatArray, target: FloatArray) -> float:
        """Distance between two images."""
        ...

    def gradient(self, rendered: FloatArray, target: FloatArray) -> FloatArray:
        """Derivative of :meth:`value` with respect to ``rendered``."""
        ...


def _pool(image: FloatArray) -> FloatArray:
    h, w = image.shape[0] // 2 * 2, image.shape[1] // 2 * 2
    cropped = image[:h, :w]
    return 0.25 * (cropped[0::2, 0::2] + cropped[1::2, 0::2] + cropped[0::2, 1::2] + cropped[1::2, 1::2])


def _unpool(grad: FloatArray, shape: tuple[int, ...]) -> FloatArray:
    out = np.zeros(shape)
    h, w = grad.shape[0] * 2, grad.shape[1] * 2
    quarter = 0.25 * grad
    for dy in (0, 1):
        for dx in (0, 1):
            out[dy:h:2, dx:w:2] = quarter
    return out


def _magnitude(image: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
    gx = image[:-1, 1:] - image[:-1, :-1]
    gy = image[1:, :-1] - image[:-1, :-1]
    return np.sqrt(gx * gx + gy * gy + _MAGNITUDE_EPS), gx, gy


class GradientMagnitudeProxy:
    """Mean absolute difference of gradient magnitudes over an average-pooled pyramid."""

    def __init__(self, levels: int = 3) -> None:  # noqa: D107
        self.levels = levels

    def _pyramid(self, image: FloatArray) -> list[FloatArray]:
        pyramid = [image]
        while len(pyramid) < self.levels and min(pyramid[-1].shape[:2]) >= 4:  # noqa: PLR2004
            pyramid.append(_pool(pyramid[-1]))
        return [level for level in pyramid if min(level.shape[:2]) >= 2]  # noqa: PLR2004

    def value(self, rendered: FloatArray, target: FloatArray) -> float:  # noqa: D102
        r, t = _check_images(rendered, target)
        pairs = list(zip(self._pyramid(r), self._pyramid(t), strict=True))
        if not pairs:
            return 0.0
        return float(np.mean([np.mean(np.abs(_magnitude(a)[0] - _magnitude(b)[0])) for a, b in pairs]))

    def gradient(self, rendered: FloatArray, target: FloatArray) -> FloatArray:  # noqa: D102
        r, t = _check_images(rendered, target)
        levels_r, levels_t = self._pyramid(r), self._pyramid(t)
        if not levels_r:
            return np.zeros_like(r)
        upstream = np.zeros_like(levels_r[-1])
        for level in range(len(levels_r) - 1, -1, -1):
            a, b = levels_r[level], levels_t[level]
            mag_a, gx, gy = _magnitude(a)
            mag_b = _magnitude(b)[0]
            g_mag = np.sign(mag_a - mag_b) / (mag_a.size * len(levels_r))
            g_gx, g_gy = g_mag * gx / mag_a, g_mag * gy / mag_a
            grad = upstream
            grad[:-1, 1:] += g_gx
            grad[:-1, :-1] -= g_gx + g_gy
            grad[1:, :-1] += g_gy
            upstream = _unpool(grad, levels_r[level - 1].shape) if level else grad
        return upstream


def rgb_loss(rendered: ArrayLike, target: ArrayLike, lam: float, perceptual: PerceptualMetric | None = None) -> float:
    """``lam * MSE + (1 - lam) * perceptual``."""
    r, t = _check_images(rendered, target)
    _check_lambda(lam)
    metric = perceptual or GradientMagnitudeProxy()
    value = lam * mse(r, t)
    if lam < 1.0:
        value += (1.0 - lam) * metric.value(r, t)
    return value


def rgb_loss_gradient(
    rendered: ArrayLike, target: ArrayLike, lam: float, perceptual: PerceptualMetric | None = None,
) -> FloatArray:
    """Derivative of :func:`rgb_loss` with respect to ``rendered``."""
    r, t = _check_images(rendered, target)
    _check_lambda(lam)
    metric = perceptual or GradientMagnitudeProxy()
    grad = lam * mse_gradient(r, t)
    if lam < 1.0:
        grad = grad + (1.0 - lam) * metric.gradient(r, t)
    return grad


def _padded_mass(label_mass: ArrayLike, target: NDArray[np.int64]) -> FloatArray:
    mass = np.asarray(label_mass, dtype=np.float64)
    needed = int(target.max()) + 1 if target.size else 1
    if mass.shape[2] < needed:
        mass = np.concatenate([mass, np.zeros((*mass.shape[:2], needed - mass.shape[2]))], axis=2)
    return mass


def soft_labels(label_mass: ArrayLike) -> FloatArray:
    """Per-pixel label distribution; pixels without weight predict label 0."""
    mass = np.asarray(label_mass, dtype=np.float64)
    total = mass.sum(axis=2, keepdims=True)
    empty = total < MASS_FLOOR
    probs = np.divide(mass, total, out=np.zeros_like(mass), where=~empty)
    probs[..., 0] = np.where(empty[..., 0], 1.0, probs[..., 0])
    return probs


def label_cross_entropy(label_mass: ArrayLike, target: ArrayLike) -> float:
    """Mean per-pixel ``-log((p_m + 1e-6) / (1 + 1e-6))`` for target label ``m``."""
    target = np.asarray(target, dtype=np.int64)
    mass = _padded_mass(label_mass, target)
    if mass.shape[:2] != target.shape:
        msg = f"Label prediction {mass.shape[:2]} and target {target.shape} differ."
        raise DimensionMismatchError(msg)
    probs = np.take_along_axis(soft_labels(mass), target[..., None], axis=2)[..., 0]
    return float(np.mean(-np.log((probs + LABEL_EPS) / (1.0 + LABEL_EPS))))


def label_cross_entropy_gradient(label_mass: ArrayLike, target: ArrayLike) -> FloatArray:
    """Derivative of :func:`label_cross_entropy` with respect to the label mass."""
    target = np.asarray(target, dtype=np.int64)
    original = np.asarray(label_mass, dtype=np.float64)
    mass = _padded_mass(original, target)
    total = mass.sum(axis=2, keepdims=True)
    live = total >= MASS_FLOOR
    safe_total = np.where(live, total, 1.0)
    hit = np.take_along_axis(mass, target[..., None], axis=2)
    p = hit / safe_total
    onehot = np.zeros_like(mass)
    np.put_along_axis(onehot, target[..., None], 1.0, axis=2)
    dp = (onehot * safe_total - hit) / safe_total**2
    grad = np.where(live, -dp / (p + LABEL_EPS), 0.0) / target.size
    return grad[..., : original.shape[2]]


def tracking_offset_term(scene: Scene) -> float:
    """Mean squared drift of bound offsets from their rest offsets."""
    posable = scene.posable
    if not np.any(posable):
        return 0.0
    drift = scene.offset[posable] - scene.rest_offset[posable]
    return float(np.mean(np.sum(drift * drift, axis=1)))


def tracking_loss(scene: Scene, label_mass: ArrayLike, target_labels: ArrayLike, lam: float) -> float:
    """``lam * offset drift + (1 - lam) * label cross-entropy``."""
    _check_lambda(lam)
    return lam * tracking_offset_term(scene) + (1.0 - lam) * label_cross_entropy(label_mass, target_labels)


def _anchor_fields(vector: ParamVector) -> dict[str, FloatArray]:
    return {
        "position": vector.field("mu"),
        "rotation": quaternion.normalize(vector.field("q")) if len(vector.template) else np.zeros((0, 4)),
        "log_scale": vector.field("log_s"),
        "color": vector.field("color"),
    }


def _as_vector(scene: Scene | ParamVector) -> ParamVector:
    return scene if isinstance(scene, ParamVector) else pack_params(scene)


def _anchor_factors(count: int, free: ArrayLike | None) -> FloatArray:
    factor = np.ones(count)
    if free is not None:
        idx = np.asarray(getattr(free, "indices", free), dtype=np.int64)
        factor[idx] = FREE_SET_FACTOR
    return factor


def _align(current: ParamVector, reference: ParamVector) -> None:
    if len(current.template) != len(reference.template):
        msg = f"Scene has {len(current.template)} splats, reference has {len(reference.template)}."
        raise AlignmentError(msg)


def gs_anchor_loss(
    scene: Scene | ParamVector,
    reference: Scene | ParamVector,
    weights: AnchorWeights | None = None,
    free: ArrayLike | None = None,
) -> float:
    """Weighted squared distance of position, transform and color slots to ``reference``.

    Splats in ``free`` (indices or a selection) count with factor 0.01.
    """
    current, ref = _as_vector(scene), _as_vector(reference)
    _align(current, ref)
    w = weights or AnchorWeights()
    a, b = _anchor_fields(current), _anchor_fields(ref)
    per_splat = (
        w.position * np.sum((a["position"] - b["position"]) ** 2, axis=1)
        + w.transform * np.sum((a["rotation"] - b["rotation"]) ** 2, axis=1)
        + w.transform * np.sum((a["log_scale"] - b["log_scale"]) ** 2, axis=1)
        + w.color * np.sum((a["color"] - b["color"]) ** 2, axis=1)
    )
    return float(np.sum(_anchor_factors(len(current.template), free) * per_splat))


def gs_anchor_gradient(
    scene: ParamVector,
    reference: Scene | ParamVector,
    weights: AnchorWeights | None = None,
    free: ArrayLike | None = None,
) -> FloatArray:
    """Derivative of :func:`gs_anchor_loss` with respect to the flat values of ``scene``."""
    ref = _as_vector(reference)
    _align(scene, ref)
    w = weights or AnchorWeights()
    a, b = _anchor_fields(scene), _anchor_fields(ref)
    factor = _anchor_factors(len(scene.template), free)[:, None]
    grad = np.zeros_like(scene.blocks())
    layout = scene.layout
    grad[:, layout.slot("mu")] = 2 * w.position * factor * (a["position"] - b["position"])
    g_unit = 2 * w.transform * factor * (a["rotation"] - b["rotation"])
    grad[:, layout.slot("q")] = quaternion.normalize_gradient(scene.field("q"), g_unit) if len(g_unit) else g_unit
    grad[:, layout.slot("log_s")] = 2 * w.transform * factor * (a["log_scale"] - b["log_scale"])
    grad[:, layout.slot("color")] = 2 * w.color * factor * (a["color"] - b["color"])
    return grad.reshape(-1)


def hinge_d_loss(real_scores: ArrayLike, fake_scores: ArrayLike) -> float:
    """``mean(max(0, 1 - D(x))) + mean(max(0, 1 + D(G(z))))``."""
    real = np.asarray(real_scores, dtype=np.float64)
    fake = np.asarray(fake_scores, dtype=np.float64)
    return float(np.mean(np.maximum(0.0, 1.0 - real)) + np.mean(np.maximum(0.0, 1.0 + fake)))


def hinge_d_gradient(real_scores: ArrayLike, fake_scores: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Derivatives of :func:`hinge_d_loss` with respect to the real and fake scores."""
    real = np.asarray(real_scores, dtype=np.float64)
    fake = np.asarray(fake_scores, dtype=np.float64)
    return -(real < 1.0).astype(np.float64) / real.size, (fake > -1.0).astype(np.float64) / fake.size


def hinge_g_loss(fake_scores: ArrayLike) -> float:
    """``-mean(D(G(z)))``."""
    return float(-np.mean(np.asarray(fake_scores, dtype=np.float64)))


def hinge_g_gradient(fake_scores: ArrayLike) -> FloatArray:
    """Derivative of :func:`hinge_g_loss` with respect to the fake scores."""
    fake = np.asarray(fake_scores, dtype=np.float64)
    return np.full(fake.shape, -1.0 / fake.size)


def total_rec_loss(rgb: float, tracking: float, lam: float) -> float:
    """``lam * rgb + (1 - lam) * tracking``."""
    _check_lambda(lam)
    return lam * rgb + (1.0 - lam) * tracking


def edit_weights(weights: tuple[float, float, float]) -> tuple[float, float, float]:
    """Normalise the edit triple so it sums to one."""
    total = float(sum(weights))
    if min(weights) < 0 or total <= 0:
        msg = f"Edit weights {weights} must be >= 0 and not all zero."
        raise InvalidWeightsError(msg)
    return weights[0] / total, weights[1] / total, weights[2] / total


def total_edit_loss(rgb: float, anchor: float, adversarial: float, weights: tuple[float, float, float]) -> float:
    """``(l1 rgb + l2 anchor + l3 adversarial) / (l1 + l2 + l3)``."""
    w1, w2, w3 = weights
    total = float(w1 + w2 + w3)
    if min(weights) < 0 or total <= 0:
        msg = f"Edit weights {weights} must be >= 0 and not all zero."
        raise InvalidWeightsError(msg)
    return (w1 * rgb + w2 * anchor + w3 * adversarial) / total


__all__ = [
    "AnchorWeights",
    "GradientMagnitudeProxy",
    "LossWeights",
    "PerceptualMetric",
    "edit_weights",
    "gs_anchor_gradient",
    "gs_anchor_loss",
    "hinge_d_gradient",
    "hinge_d_loss",
    "hinge_g_gradient",
    "hinge_g_loss",
    "label_cross_entropy",
    "label_cross_entropy_gradient",
    "mse",
    "mse_gradient",
    "rgb_loss",
    "rgb_loss_gradient",
    "soft_labels",
    "total_edit_loss",
    "total_rec_loss",
    "tracking_loss",
    "tracking_offset_term",
]
