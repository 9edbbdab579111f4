"""Finite-difference verification of the analytic reverse pass.

Scenes are built so the loss is smooth around the evaluation point: no screen
cutoff, opacities low enough that early termination never triggers, depths
spread far enough apart that a perturbation cannot reorder splats, and colors
away from the clamp.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from loguru import logger
from tqdm import tqdm

from . import quaternion
from .camera import Camera
from .gradients import ObjectiveConfig, View, evaluate
from .losses import LossWeights
from .rig import MeshFrame, bind_splats
from .splat import LAYOUT, ParamVector, Scene, pack_params

PARAMETER_CLASSES: dict[str, str] = {
    "mu": "position",
    "q": "rotation",
    "log_s": "scale",
    "logit_opacity": "opacity",
    "color": "color",
}


@dataclass(frozen=True)
class GradcheckOptions:
    """Size and tolerances of a gradient check run."""

    configs: int = 100
    splats: int = 20
    size: int = 16
    step: float = 1e-4
    tolerance: float = 1e-3
    floor: float = 1e-8
    seed: int = 0


@dataclass
class GradcheckReport:
    """Worst relative error per parameter class over every checked coordinate."""

    per_class: dict[str, float] = field(default_factory=lambda: dict.fromkeys(PARAMETER_CLASSES.values(), 0.0))
    coordinates: int = 0
    configs: int = 0
    tolerance: float = 1e-3

    @property
    def max_error(self) -> float:  # noqa: D102
        return max(self.per_class.values(), default=0.0)

    @property
    def passed(self) -> bool:  # noqa: D102
        return self.max_error < self.tolerance

    def rows(self) -> list[tuple[str, float]]:
        """``(class, max relative error)`` rows for reporting."""
        return [*self.per_class.items(), ("all", self.max_error)]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _check_mesh() -> MeshFrame:
    vertices = [(-0.6, -0.6, 2.5), (0.6, -0.6, 2.5), (0.6, 0.6, 2.5), (-0.6, 0.6, 2.5), (0.0, 0.0, 2.3)]
    triangles = [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]
    return MeshFrame(np.array(vertices), np.array(triangles))


def gradcheck_case(rng: np.random.Generator, splats: int = 20, size: int = 16) -> tuple[ParamVector, list[View]]:
    """A random smooth configuration: half the splats mesh-bound, one camera, random targets."""
    cam = Camera(float(size), float(size), (size - 1) / 2, (size - 1) / 2, np.eye(3), np.zeros(3), size, size)
    depth = 2.0 + 0.1 * rng.permutation(splats)
    pixel = rng.uniform(-3.0, 3.0, (splats, 2))
    mu = np.column_stack([pixel * depth[:, None] / cam.fx, depth])
    base = rng.uniform(2.0, 4.0, splats) * depth / cam.fx
    scale = base[:, None] * np.column_stack([np.ones(splats), rng.uniform(0.5, 1.5, (splats, 2))])
    free = Scene.from_arrays(
        mu=mu,
        q=quaternion.random_unit(rng, splats),
        s=scale,
        opacity=rng.uniform(0.05, 0.3, splats),
        color=rng.uniform(0.1, 0.9, (splats, 3)),
        label=rng.integers(1, 4, splats),
    )
    rest = _check_mesh()
    bound = bind_splats(free, rest)
    half = rng.permutation(splats)[: splats // 2]
    columns = free.columns()
    for name, column in bound.columns().items():
        if name not in {"mu", "q", "s", "opacity", "color", "label"}:
            columns[name] = column.copy()
    keep_free = np.ones(splats, dtype=np.bool_)
    keep_free[half] = False
    columns["bound"] = ~keep_free
    scene = Scene(**columns)

    angle = rng.uniform(-0.1, 0.1)
    spin = quaternion.to_matrix(quaternion.about_axis((0.0, 0.0, 1.0), angle))
    center = np.array([0.0, 0.0, 2.5])
    moved = MeshFrame(1.05 * (rest.vertices - center) @ spin.T + center + np.array([0.05, -0.03, 0.0]), rest.triangles, 1)
    view = View(
        camera=cam,
        target=rng.uniform(0.0, 1.0, (size, size, 3)),
        mesh=moved,
        labels=rng.integers(0, 4, (size, size)),
    )
    return pack_params(scene), [view]


def finite_difference(vector: ParamVector, views: list[View], config: ObjectiveConfig, step: float) -> np.ndarray:
    """Central differences of the loss with respect to every coordinate of ``vector``."""
    numeric = np.zeros(len(vector))
    for k in range(len(vector)):
        plus = vector.values.copy()
        minus = vector.values.copy()
        plus[k] += step
        minus[k] -= step
        up = evaluate(vector.with_values(plus), views, config, gradient=False).loss
        down = evaluate(vector.with_values(minus), views, config, gradient=False).loss
        numeric[k] = (up - down) / (2 * step)
    return numeric


def gradcheck_config() -> ObjectiveConfig:
    """Modeling loss with pure MSE color term, tracking enabled and no screen cutoff."""
    return ObjectiveConfig(weights=LossWeights(lambda_rgb=1.0), sigma_cutoff=None)


def run_gradcheck(options: GradcheckOptions | None = None, *, progress: bool = False) -> GradcheckReport:
    """Compare analytic and numeric gradients on ``options.configs`` random scenes."""
    options = options or GradcheckOptions()
    rng = np.random.default_rng(options.seed)
    config = gradcheck_config()
    report = GradcheckReport(tolerance=options.tolerance)
    classes = np.array([PARAMETER_CLASSES[name] for name, width in LAYOUT.fields for _ in range(width)])
    for _ in tqdm(range(options.configs), desc="gradcheck", disable=not progress):
        vector, views = gradcheck_case(rng, options.splats, options.size)
        analytic = evaluate(vector, views, config).gradient
        numeric = finite_difference(vector, views, config, options.step)
        errors = relative_error(analytic, numeric, options.floor).reshape(-1, LAYOUT.width)
        for name in report.per_class:
            worst = float(errors[:, classes == name].max(initial=0.0))
            report.per_class[name] = max(report.per_class[name], worst)
        report.coordinates += len(vector)
        report.configs += 1
    logger.info(f"Gradient check over {report.configs} scenes: max relative error {report.max_error:.3e}")
    return report


__all__ = [
    "GradcheckOptions",
    "GradcheckReport",
    "finite_difference",
    "gradcheck_case",
    "gradcheck_config",
    "relative_error",
    "run_gradcheck",
]
