"""Modeling and editing training loops, checkpoints and the CSV training log."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from loguru import logger
from tqdm import tqdm

from .density import DensifyOptions, DensifyStats, densify_and_prune
from .discriminator import DiscriminatorTrainer
from .exceptions import InvalidParameterError, NonFiniteError, NoTargetError, TrainingAbortedError
from .gradients import ObjectiveConfig, Stage, View, evaluate, image_backward
from .losses import LossWeights, edit_weights, hinge_g_gradient, hinge_g_loss
from .optim import AdamState, Schedule, adam_step, field_scales
from .renderer import SIGMA_CUTOFF
from .rig import bind_splats, pose_splats
from .segmentation import assign_labels
from .splat import LAYOUT, Scene, pack_params, unpack_params
from .storage import load_optimizer_state, load_scene, save_optimizer_state, save_scene

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence
    from pathlib import Path
    from types import TracebackType

    from numpy.typing import NDArray

    from .dataset import Dataset
    from .masks import SplatSelection
    from .rig import MeshFrame
    from .splat import ParamVector

    FloatArray = NDArray[np.float64]

CHECKPOINT = "checkpoint.splat"
SIDECAR = "checkpoint.npz"
FAILED = "failed.splat"
FAILED_SIDECAR = "failed.npz"
FINAL = "scene.splat"

DEFAULT_LR_SCALES: Mapping[str, float] = {"mu": 1.0, "q": 1.0, "log_s": 5.0, "logit_opacity": 20.0, "color": 10.0}


@dataclass(frozen=True)
class FitOptions:
    """Options of :func:`fit_modeling_stage`."""

    iterations: int = 5000
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    lr_scales: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_LR_SCALES))
    weights: LossWeights = field(default_factory=LossWeights)
    density: DensifyOptions = field(default_factory=DensifyOptions)
    initial_splats: int = 300
    views_per_step: int = 1
    holdout: tuple[int, ...] = ()
    checkpoint_every: int = 500
    seed: int = 0
    sigma_cutoff: float | None = SIGMA_CUTOFF


@dataclass(frozen=True)
class EditOptions:
    """Options of :func:`fit_editing_stage`."""

    iterations: int = 300
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    lr_scales: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_LR_SCALES))
    weights: LossWeights = field(default_factory=LossWeights)
    patch: int = 16
    patches_per_step: int = 8
    disc_steps: int = 1
    disc_lr: float = 1e-3
    checkpoint_every: int = 0
    seed: int = 0
    sigma_cutoff: float | None = SIGMA_CUTOFF


@dataclass(frozen=True, eq=False)
class EditTarget:
    """An edited image for one (time, pose) node and the mask the edit was confined to."""

    view: View
    mask: NDArray[np.bool_]


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of a training loop."""

    scene: Scene
    history: list[dict[str, float]]
    state: AdamState
    checkpoint: Path | None = None


class TrainingLog:
    """CSV training log; the run's loss weights are written as ``# key=value`` header lines."""

    def __init__(self, path: Path | None, columns: Sequence[str], header: Mapping[str, Any]) -> None:  # noqa: D107
        self.path = path
        self.columns = list(columns)
        self.header = dict(header)
        self.rows: list[dict[str, float]] = []
        self._fh = None
        self._writer: csv.DictWriter | None = None

    def __enter__(self) -> TrainingLog:  # noqa: D105
        if self.path is not None:
            append = self.path.exists()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = self.path.open("a" if append else "w", encoding="utf-8", newline="")
            self._writer = csv.DictWriter(self._fh, fieldnames=self.columns)
            if not append:
                for key, value in self.header.items():
                    self._fh.write(f"# {key}={value}\n")
                self._writer.writeheader()
        return self

    def __exit__(  # noqa: D105
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def write(self, row: Mapping[str, float]) -> None:
        """Record one iteration."""
        entry = {name: row.get(name, 0.0) for name in self.columns}
        self.rows.append(entry)
        if self._writer is not None:
            self._writer.writerow(entry)


def read_log(path: Path) -> tuple[dict[str, str], list[dict[str, float]]]:
    """Header values and rows of a training log."""
    header: dict[str, str] = {}
    body: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            header[key] = value
        else:
            body.append(line)
    rows = [{k: float(v) for k, v in row.items()} for row in csv.DictReader(body)]
    return header, rows


def initial_scene(mesh: MeshFrame, count: int, rng: np.random.Generator) -> Scene:
    """``count`` gray isotropic splats sampled on ``mesh`` by area and bound to it."""
    areas = mesh.areas
    tri = rng.choice(len(mesh), size=count, p=areas / areas.sum())
    r1, r2 = rng.random(count), rng.random(count)
    root = np.sqrt(r1)
    bary = np.stack([1.0 - root, root * (1.0 - r2), root * r2], axis=1)
    points = np.einsum("nk,nkd->nd", bary, mesh.corners[tri])
    radius = 0.5 * np.sqrt(areas.sum() / max(count, 1))
    scene = Scene.from_arrays(
        mu=points,
        q=np.tile([1.0, 0.0, 0.0, 0.0], (count, 1)),
        s=np.full((count, 3), radius),
        opacity=np.full(count, 0.5),
        color=np.full((count, 3), 0.5),
    )
    return bind_splats(scene, mesh)


def _rest_pose(scene: Scene, mesh: MeshFrame | None) -> Scene:
    return scene if mesh is None or not np.any(scene.posable) else pose_splats(scene, mesh)


def _label_views(dataset: Dataset, frame: int) -> tuple[list, list]:
    maps, cameras = [], []
    for p, cam in enumerate(dataset.cameras):
        labels = dataset.labels(frame, p)
        if labels is not None:
            maps.append(labels)
            cameras.append(cam)
    return maps, cameras


def label_scene(scene: Scene, dataset: Dataset, frame: int = 0) -> Scene:
    """Give splats the majority segmenter label of the pixels they win on ``frame``."""
    maps, cameras = _label_views(dataset, frame)
    if not maps:
        return scene
    labeled = assign_labels(_rest_pose(scene, dataset.mesh(frame)), maps, cameras)
    return scene.replace(label=labeled.label)


class Checkpointer:
    """Writes a splat file and optimizer sidecar into an output directory."""

    def __init__(self, out_dir: Path | None, rest_mesh: MeshFrame | None) -> None:  # noqa: D107
        self.out_dir = out_dir
        self.rest_mesh = rest_mesh

    def snapshot(self, vector: ParamVector) -> Scene:
        """Scene held by ``vector``, posed on the rest mesh."""
        return _rest_pose(unpack_params(vector).scene, self.rest_mesh)

    def save(self, vector: ParamVector, state: AdamState, iteration: int) -> Path | None:
        """Write the checkpoint; no-op without an output directory."""
        path = self._write(vector, state, iteration, CHECKPOINT, SIDECAR)
        if path is not None:
            logger.info(f"Checkpoint at iteration {iteration}: {len(vector.template)} splats -> {path}")
        return path

    def save_failed(self, vector: ParamVector, state: AdamState, iteration: int) -> Path | None:
        """Write a non-finite state beside the last good checkpoint, never over it."""
        path = self._write(vector, state, iteration, FAILED, FAILED_SIDECAR)
        if path is not None:
            logger.warning(f"Non-finite state at iteration {iteration} kept in {path}")
        return path

    def _write(self, vector: ParamVector, state: AdamState, iteration: int, name: str, sidecar: str) -> Path | None:
        if self.out_dir is None:
            return None
        path = save_scene(self.out_dir / name, self.snapshot(vector))
        save_optimizer_state(self.out_dir / sidecar, state, iteration)
        return path


def _sample_views(dataset: Dataset, cameras: Sequence[int], count: int, rng: np.random.Generator) -> list[View]:
    frames = rng.integers(0, dataset.frame_count, size=count)
    picks = rng.integers(0, len(cameras), size=count)
    return [dataset.view(int(f), cameras[int(p)]) for f, p in zip(frames, picks, strict=True)]


def fit_modeling_stage(  # noqa: C901, PLR0912, PLR0915
    dataset: Dataset,
    options: FitOptions | None = None,
    *,
    out_dir: Path | None = None,
    initial: Scene | None = None,
    resume: Path | None = None,
    progress: bool = False,
) -> FitResult:
    """Reconstruct a mesh-bound splat scene from a dataset.

    Every iteration samples views, poses the splats on the view's mesh, renders,
    takes the reconstruction loss and one Adam step. Density control runs every
    ``options.density.interval`` iterations. With ``out_dir`` set, checkpoints and
    ``train_log.csv`` are written there and the final scene goes to ``scene.splat``.
    """
    options = options or FitOptions()
    rest_mesh = dataset.mesh(0)
    cameras = [p for p in range(dataset.camera_count) if p not in options.holdout]
    if not cameras:
        msg = "Every camera is held out; nothing to train on."
        raise InvalidParameterError(msg)
    schedule = Schedule(options.lr_start, options.lr_end, options.iterations)

    if resume is not None:
        scene = load_scene(resume)
        state, start = load_optimizer_state(resume.with_suffix(".npz"))
        rng = np.random.default_rng([options.seed, start])
        logger.info(f"Resuming from {resume} at iteration {start}")
    else:
        rng = np.random.default_rng(options.seed)
        if initial is None:
            if rest_mesh is None:
                msg = "A dataset without meshes needs an explicit initial scene."
                raise InvalidParameterError(msg)
            initial = label_scene(initial_scene(rest_mesh, options.initial_splats, rng), dataset)
        scene = initial
        start = 0
        state = AdamState.zeros(len(scene) * LAYOUT.width, schedule, field_scales(len(scene), options.lr_scales))

    vector = pack_params(scene)
    config = ObjectiveConfig(Stage.MODELING, options.weights, sigma_cutoff=options.sigma_cutoff)
    stats = DensifyStats.zeros(len(scene))
    checkpoints = Checkpointer(out_dir, rest_mesh)
    last_checkpoint: Path | None = None
    interval = options.density.interval
    header = {
        "stage": Stage.MODELING.value,
        "lambda_rgb": config.lambda_rgb,
        "lambda_track": options.weights.lambda_track,
        "lambda_rec": options.weights.lambda_rec,
        "seed": options.seed,
    }
    columns = ["iteration", "loss", "rgb", "tracking", "label_ce", "lr", "splats"]
    log_path = None if out_dir is None else out_dir / "train_log.csv"

    with TrainingLog(log_path, columns, header) as log:
        steps = range(start, options.iterations)
        it = start
        try:
            for it in tqdm(steps, desc="modeling", disable=not progress):
                views = _sample_views(dataset, cameras, options.views_per_step, rng)
                try:
                    evaluation = evaluate(vector, views, config)
                except NonFiniteError as exc:
                    checkpoints.save_failed(vector, state, it)
                    msg = f"Training stopped at iteration {it}: {exc}"
                    raise TrainingAbortedError(msg, checkpoint=last_checkpoint) from exc
                for out, screen in zip(evaluation.renders, evaluation.screen_grad, strict=True):
                    stats.update(screen, out.radii)
                lr = state.lr
                vector, state = adam_step(vector, evaluation.gradient, state)
                step = it + 1
                row = {"iteration": step, "loss": evaluation.loss, **evaluation.terms, "lr": lr, "splats": len(vector.template)}
                log.write(row)

                if step % interval == 0 and step < options.iterations:
                    world = checkpoints.snapshot(vector)
                    result = densify_and_prune(world, stats, options.density, dataset.extent, rng)
                    vector = pack_params(result.scene)
                    state = state.remap(result.source, result.children)
                    stats = result.stats
                if options.checkpoint_every and step % options.checkpoint_every == 0:
                    last_checkpoint = checkpoints.save(vector, state, step)
        except KeyboardInterrupt:
            checkpoints.save(vector, state, it)
            logger.warning(f"Interrupted at iteration {it}; checkpoint written")
            raise

    if start >= options.iterations:
        final = scene
    else:
        final = label_scene(checkpoints.snapshot(vector), dataset)
        last_checkpoint = checkpoints.save(vector, state, options.iterations)
    if out_dir is not None:
        save_scene(out_dir / FINAL, final)
    logger.info(f"Modeling finished with {len(final)} splats")
    return FitResult(final, log.rows, state, last_checkpoint)


def _patch_corners(mask: NDArray[np.bool_], patch: int, count: int, rng: np.random.Generator) -> NDArray[np.int64]:
    """Top-left corners of ``count`` patches centred on random in-mask pixels."""
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    if ys.size == 0 or h < patch or w < patch:
        return np.zeros((0, 2), dtype=np.int64)
    pick = rng.integers(0, ys.size, size=count)
    y0 = np.clip(ys[pick] - patch // 2, 0, h - patch)
    x0 = np.clip(xs[pick] - patch // 2, 0, w - patch)
    return np.stack([y0, x0], axis=1).astype(np.int64)


def extract_patches(image: FloatArray, corners: NDArray[np.int64], patch: int) -> FloatArray:
    """``(B, patch, patch, 3)`` crops of ``image`` at ``corners``."""
    if not len(corners):
        return np.zeros((0, patch, patch, 3))
    return np.stack([image[y : y + patch, x : x + patch] for y, x in corners])


def scatter_patches(grads: FloatArray, corners: NDArray[np.int64], shape: tuple[int, ...]) -> FloatArray:
    """Accumulate per-patch image gradients into a full-image gradient."""
    out = np.zeros(shape)
    patch = grads.shape[1]
    for g, (y, x) in zip(grads, corners, strict=True):
        out[y : y + patch, x : x + patch] += g
    return out


def fit_editing_stage(  # noqa: PLR0913, PLR0915
    scene: Scene,
    selection: SplatSelection,
    targets: Sequence[EditTarget],
    options: EditOptions | None = None,
    *,
    reference: Scene | None = None,
    rest_mesh: MeshFrame | None = None,
    out_dir: Path | None = None,
    progress: bool = False,
) -> FitResult:
    """Fit ``scene`` to edited targets while anchoring it to its pre-edit state.

    Each iteration takes one discriminator step on patches sampled inside the edit
    mask (real: edited target, fake: current render), then one scene step on the
    normalised blend of color loss, anchoring and the generator hinge term. The
    generator gradient only reaches the selected splats.
    """
    options = options or EditOptions()
    if len(selection) == 0:
        msg = "The edit selects no splats."
        raise NoTargetError(msg)
    if not targets:
        msg = "The editing stage needs at least one edited target."
        raise InvalidParameterError(msg)
    rng = np.random.default_rng(options.seed)
    vector = pack_params(scene)
    anchor = vector if reference is None else pack_params(reference)
    config = ObjectiveConfig(
        Stage.EDITING,
        options.weights,
        reference=anchor,
        free=selection.indices,
        sigma_cutoff=options.sigma_cutoff,
    )
    _, _, w_adv = edit_weights(options.weights.edit)
    schedule = Schedule(options.lr_start, options.lr_end, options.iterations)
    state = AdamState.zeros(len(vector), schedule, field_scales(len(scene), options.lr_scales))
    selected = np.repeat(selection.mask(len(scene)), LAYOUT.width)
    trainer = DiscriminatorTrainer.create(rng, options.patch, options.disc_lr)
    checkpoints = Checkpointer(out_dir, rest_mesh)
    last_checkpoint: Path | None = None
    header = {
        "stage": Stage.EDITING.value,
        "lambda_rgb": config.lambda_rgb,
        "edit_weights": "/".join(str(w) for w in options.weights.edit),
        "selected": len(selection),
        "seed": options.seed,
    }
    columns = ["iteration", "loss", "rgb", "anchor", "generator", "discriminator", "lr", "splats"]
    log_path = None if out_dir is None else out_dir / "edit_log.csv"
    logger.info(f"Editing {len(selection)} of {len(scene)} splats over {len(targets)} targets")

    with TrainingLog(log_path, columns, header) as log:
        for it in tqdm(range(options.iterations), desc="editing", disable=not progress):
            target = targets[int(rng.integers(0, len(targets)))]
            try:
                evaluation = evaluate(vector, [target.view], config)
            except NonFiniteError as exc:
                checkpoints.save_failed(vector, state, it)
                msg = f"Editing stopped at iteration {it}: {exc}"
                raise TrainingAbortedError(msg, checkpoint=last_checkpoint) from exc
            rendered = evaluation.renders[0].color
            grad = evaluation.gradient
            d_loss = g_loss = 0.0
            corners = _patch_corners(target.mask, options.patch, options.patches_per_step, rng)
            if len(corners):
                real = extract_patches(target.view.target, corners, options.patch)
                fake = extract_patches(rendered, corners, options.patch)
                for _ in range(options.disc_steps):
                    d_loss = trainer.step(real, fake)
                scores = trainer.network(fake)
                g_loss = hinge_g_loss(scores)
                if w_adv > 0:
                    _, g_patches = trainer.network.backward(fake, hinge_g_gradient(scores))
                    g_image = scatter_patches(w_adv * g_patches, corners, rendered.shape)
                    current = unpack_params(vector).scene
                    adversarial, _ = image_backward(vector, current, target.view, g_image, sigma_cutoff=options.sigma_cutoff)
                    grad = grad + np.where(selected, adversarial, 0.0)
            lr = state.lr
            vector, state = adam_step(vector, grad, state)
            log.write(
                {
                    "iteration": it + 1,
                    "loss": evaluation.loss + w_adv * g_loss,
                    "rgb": evaluation.terms["rgb"],
                    "anchor": evaluation.terms["anchor"],
                    "generator": g_loss,
                    "discriminator": d_loss,
                    "lr": lr,
                    "splats": len(scene),
                },
            )
            if options.checkpoint_every and (it + 1) % options.checkpoint_every == 0:
                last_checkpoint = checkpoints.save(vector, state, it + 1)

    edited = checkpoints.snapshot(vector) if options.iterations else scene
    if out_dir is not None:
        save_scene(out_dir / FINAL, edited)
    return FitResult(edited, log.rows, state, last_checkpoint)


__all__ = [
    "DEFAULT_LR_SCALES",
    "Checkpointer",
    "EditOptions",
    "EditTarget",
    "FitOptions",
    "FitResult",
    "TrainingLog",
    "extract_patches",
    "fit_editing_stage",
    "fit_modeling_stage",
    "initial_scene",
    "label_scene",
    "read_log",
    "scatter_patches",
]
