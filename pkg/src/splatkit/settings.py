"""Run option sections and their conversion to option objects.

Every option of a run lives here as a :class:`RunSetting` on a section class.
The CLI assigns flags onto these sections, optionally binds a settings file and
dumps the resolved values into ``resolved.ini`` of the output directory. The
algorithms never read these globals: they receive the frozen option objects
built by the ``*_options`` functions below.
"""
from __future__ import annotations

from typing import TYPE_CHECKING, ClassVar, TypeVar

from .config import EnvSetting, SectionMeta, Setting
from .data_types import Float, Integer, PositiveFloat, PositiveInt, String, Tuple, UnitInterval
from .density import DensifyOptions
from .editing import SUBJECT_LEFT, ServiceOptions
from .gradcheck import GradcheckOptions
from .losses import AnchorWeights, LossWeights
from .pipeline import PipelineOptions
from .synthetic import SyntheticConfig
from .training import EditOptions, FitOptions

if TYPE_CHECKING:
    from pathlib import Path

VT = TypeVar("VT")


class RunSetting(Setting[VT]):
    """Options of a single run; written out explicitly with :meth:`Setting.dump`."""

    write_on_edit: ClassVar[bool] = False


class ServiceSetting(EnvSetting[VT]):
    """Service endpoints and credentials, read from the environment."""


class Modeling(metaclass=SectionMeta):
    """Modeling stage: fit splats to the captured images."""

    iterations = RunSetting(PositiveInt(5000, minimum=0))
    lr_start = RunSetting(PositiveFloat(1e-3))
    lr_end = RunSetting(PositiveFloat(1e-5))
    lambda_rgb = RunSetting(UnitInterval(0.9))
    lambda_track = RunSetting(UnitInterval(0.5))
    lambda_rec = RunSetting(UnitInterval(0.8))
    initial_splats = RunSetting(PositiveInt(300))
    views_per_step = RunSetting(PositiveInt(1))
    holdout = RunSetting(Tuple((), data_type=Integer(0)))
    checkpoint_every = RunSetting(PositiveInt(500, minimum=0))
    seed = RunSetting(0)


class Density(metaclass=SectionMeta):
    """Densification and pruning."""

    interval = RunSetting(PositiveInt(2048))
    grad_threshold = RunSetting(PositiveFloat(2e-4))
    opacity_threshold = RunSetting(UnitInterval(0.005))
    percent_dense = RunSetting(UnitInterval(0.01))
    max_splats = RunSetting(PositiveInt(500))
    split_factor = RunSetting(PositiveFloat(1.6))
    split_children = RunSetting(PositiveInt(2))


class Editing(metaclass=SectionMeta):
    """Editing stage and edit regions."""

    iterations = RunSetting(PositiveInt(300, minimum=0))
    lr_start = RunSetting(PositiveFloat(1e-3))
    lr_end = RunSetting(PositiveFloat(1e-4))
    weights = RunSetting(Tuple((1.0, 1.0, 0.1)))
    anchor_position = RunSetting(Float(1.0))
    anchor_transform = RunSetting(Float(1.0))
    anchor_color = RunSetting(Float(1.0))
    patch = RunSetting(PositiveInt(16, minimum=2))
    patches_per_step = RunSetting(PositiveInt(8))
    disc_steps = RunSetting(PositiveInt(1))
    disc_lr = RunSetting(PositiveFloat(1e-3))
    workers = RunSetting(PositiveInt(4))
    w_min = RunSetting(UnitInterval(1e-3))
    threshold = RunSetting(UnitInterval(0.5))
    accessory_splats = RunSetting(PositiveInt(12))
    subject_left = RunSetting(Tuple(SUBJECT_LEFT))
    seed = RunSetting(0)


class Synthetic(metaclass=SectionMeta):
    """Synthetic capture generator."""

    cameras = RunSetting(PositiveInt(8))
    frames = RunSetting(PositiveInt(10))
    width = RunSetting(PositiveInt(64, minimum=8))
    height = RunSetting(PositiveInt(64, minimum=8))
    splats = RunSetting(PositiveInt(400))
    subdivisions = RunSetting(PositiveInt(2, minimum=0))
    jaw_amplitude = RunSetting(Float(0.15))
    camera_radius = RunSetting(PositiveFloat(4.0))
    elevation = RunSetting(Float(0.15))
    fov_degrees = RunSetting(PositiveFloat(40.0))


class Gradcheck(metaclass=SectionMeta):
    """Finite-difference gradient check."""

    configs = RunSetting(PositiveInt(100))
    splats = RunSetting(PositiveInt(20))
    size = RunSetting(PositiveInt(16, minimum=4))
    step = RunSetting(PositiveFloat(1e-4))
    tolerance = RunSetting(PositiveFloat(1e-3))
    seed = RunSetting(0)


class Services(metaclass=SectionMeta):
    """Remote refiner and editor (``EDITOR_URL``, ``REFINER_URL``, ``SERVICE_TOKEN``)."""

    editor_url = ServiceSetting(String(""))
    refiner_url = ServiceSetting(String(""))
    service_token = ServiceSetting(String(""))


def loss_weights(*, editing: bool = False) -> LossWeights:
    """Loss weights of the modeling section, with the editing blend when ``editing``."""
    anchor = AnchorWeights(Editing.anchor_position, Editing.anchor_transform, Editing.anchor_color)
    return LossWeights(
        lambda_rgb=Modeling.lambda_rgb,
        lambda_track=Modeling.lambda_track,
        lambda_rec=Modeling.lambda_rec,
        anchor=anchor,
        edit=tuple(Editing.weights) if editing else LossWeights().edit,
    )


def densify_options() -> DensifyOptions:  # noqa: D103
    return DensifyOptions(
        grad_threshold=Density.grad_threshold,
        opacity_threshold=Density.opacity_threshold,
        percent_dense=Density.percent_dense,
        interval=Density.interval,
        max_splats=Density.max_splats,
        split_factor=Density.split_factor,
        split_children=Density.split_children,
    )


def fit_options() -> FitOptions:
    """Modeling options from the ``Modeling`` and ``Density`` sections."""
    return FitOptions(
        iterations=Modeling.iterations,
        lr_start=Modeling.lr_start,
        lr_end=Modeling.lr_end,
        weights=loss_weights(),
        density=densify_options(),
        initial_splats=Modeling.initial_splats,
        views_per_step=Modeling.views_per_step,
        holdout=tuple(Modeling.holdout),
        checkpoint_every=Modeling.checkpoint_every,
        seed=Modeling.seed,
    )


def edit_options() -> EditOptions:
    """Editing stage options from the ``Editing`` section."""
    return EditOptions(
        iterations=Editing.iterations,
        lr_start=Editing.lr_start,
        lr_end=Editing.lr_end,
        weights=loss_weights(editing=True),
        patch=Editing.patch,
        patches_per_step=Editing.patches_per_step,
        disc_steps=Editing.disc_steps,
        disc_lr=Editing.disc_lr,
        seed=Editing.seed,
    )


def pipeline_options() -> PipelineOptions:  # noqa: D103
    left = tuple(float(v) for v in Editing.subject_left)
    return PipelineOptions(
        workers=Editing.workers,
        w_min=Editing.w_min,
        threshold=Editing.threshold,
        accessory_splats=Editing.accessory_splats,
        subject_left=left,
        seed=Editing.seed,
        editing=edit_options(),
    )


def synthetic_config() -> SyntheticConfig:  # noqa: D103
    return SyntheticConfig(
        cameras=Synthetic.cameras,
        frames=Synthetic.frames,
        width=Synthetic.width,
        height=Synthetic.height,
        splats=Synthetic.splats,
        subdivisions=Synthetic.subdivisions,
        jaw_amplitude=Synthetic.jaw_amplitude,
        camera_radius=Synthetic.camera_radius,
        elevation=Synthetic.elevation,
        fov_degrees=Synthetic.fov_degrees,
    )


def gradcheck_options() -> GradcheckOptions:  # noqa: D103
    return GradcheckOptions(
        configs=Gradcheck.configs,
        splats=Gradcheck.splats,
        size=Gradcheck.size,
        step=Gradcheck.step,
        tolerance=Gradcheck.tolerance,
        seed=Gradcheck.seed,
    )


def service_options(cache_dir: Path | None = None) -> ServiceOptions:
    """Endpoints from ``Services``; ``cache_dir`` enables the response cache."""
    return ServiceOptions(
        editor_url=Services.editor_url,
        refiner_url=Services.refiner_url,
        token=Services.service_token,
        cache_dir=cache_dir,
    )


__all__ = [
    "Density",
    "Editing",
    "Gradcheck",
    "Modeling",
    "RunSetting",
    "ServiceSetting",
    "Services",
    "Synthetic",
    "densify_options",
    "edit_options",
    "fit_options",
    "gradcheck_options",
    "loss_weights",
    "pipeline_options",
    "service_options",
    "synthetic_config",
]
