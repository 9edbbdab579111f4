"""Modeling and editing training loops."""
from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from splatkit import training
from splatkit.dataset import Dataset
from splatkit.density import DensifyOptions
from splatkit.editing import Action, EditRequest, MockEditor, edit_image
from splatkit.exceptions import InvalidParameterError, NonFiniteError, NoTargetError, TrainingAbortedError
from splatkit.gradients import View
from splatkit.masks import SplatSelection
from splatkit.renderer import render_label_mask
from splatkit.rig import pose_splats
from splatkit.splat import LAYOUT
from splatkit.storage import load_optimizer_state, load_scene
from splatkit.training import (
    CHECKPOINT,
    FAILED,
    FAILED_SIDECAR,
    FINAL,
    SIDECAR,
    EditOptions,
    EditTarget,
    FitOptions,
    TrainingLog,
    extract_patches,
    fit_editing_stage,
    fit_modeling_stage,
    initial_scene,
    read_log,
    scatter_patches,
)

if TYPE_CHECKING:
    from pathlib import Path

    from splatkit.synthetic import SyntheticScene

SHORT = FitOptions(iterations=4, initial_splats=40, checkpoint_every=2, density=DensifyOptions(interval=2, grad_threshold=1e-6))


def test_training_log_round_trip(tmp_path: Path) -> None:
    path = tmp_path / "log.csv"
    with TrainingLog(path, ["iteration", "loss"], {"lambda_rgb": 0.9, "seed": 3}) as log:
        log.write({"iteration": 1, "loss": 0.5})
        log.write({"iteration": 2})
    with TrainingLog(path, ["iteration", "loss"], {"ignored": 1}) as log:
        log.write({"iteration": 3, "loss": 0.25})
    header, rows = read_log(path)
    assert header == {"lambda_rgb": "0.9", "seed": "3"}
    assert rows == [{"iteration": 1.0, "loss": 0.5}, {"iteration": 2.0, "loss": 0.0}, {"iteration": 3.0, "loss": 0.25}]
    assert log.rows == [{"iteration": 3, "loss": 0.25}]


def test_initial_scene_is_bound(tiny_capture: SyntheticScene) -> None:
    scene = initial_scene(tiny_capture.meshes[0], 25, np.random.default_rng(0))
    assert len(scene) == 25
    assert scene.posable.all()
    np.testing.assert_allclose(scene.opacity, 0.5)


def test_zero_iterations_keep_the_initial_scene(tmp_path: Path, tiny_capture: SyntheticScene) -> None:
    initial = tiny_capture.scene
    result = fit_modeling_stage(tiny_capture.dataset, FitOptions(iterations=0), out_dir=tmp_path, initial=initial)
    assert result.history == []
    assert result.checkpoint is None
    saved = load_scene(tmp_path / FINAL)
    np.testing.assert_array_equal(saved.mu, initial.mu)
    header, rows = read_log(tmp_path / "train_log.csv")
    assert header["stage"] == "modeling"
    assert header["lambda_rec"] == "0.8"
    assert rows == []


def test_short_fit_writes_logs_and_checkpoints(tmp_path: Path, tiny_capture: SyntheticScene) -> None:
    result = fit_modeling_stage(tiny_capture.dataset, SHORT, out_dir=tmp_path)
    assert [row["iteration"] for row in result.history] == [1, 2, 3, 4]
    lrs = [row["lr"] for row in result.history]
    assert lrs == sorted(lrs, reverse=True)
    assert all(np.isfinite(row["loss"]) for row in result.history)
    assert result.checkpoint == tmp_path / CHECKPOINT
    state, iteration = load_optimizer_state(tmp_path / SIDECAR)
    assert iteration == 4
    assert len(state) == len(load_scene(tmp_path / CHECKPOINT)) * LAYOUT.width
    assert len(load_scene(tmp_path / FINAL)) == len(result.scene)
    _, rows = read_log(tmp_path / "train_log.csv")
    assert len(rows) == 4


def test_fit_is_deterministic(tiny_capture: SyntheticScene) -> None:
    options = FitOptions(iterations=3, initial_splats=30)
    a = fit_modeling_stage(tiny_capture.dataset, options)
    b = fit_modeling_stage(tiny_capture.dataset, options)
    np.testing.assert_array_equal(a.scene.mu, b.scene.mu)
    np.testing.assert_array_equal(a.scene.color, b.scene.color)


def test_resume_continues_the_log(tmp_path: Path, tiny_capture: SyntheticScene) -> None:
    fit_modeling_stage(tiny_capture.dataset, SHORT, out_dir=tmp_path)
    longer = FitOptions(iterations=6, initial_splats=40, checkpoint_every=2, density=SHORT.density)
    result = fit_modeling_stage(tiny_capture.dataset, longer, out_dir=tmp_path, resume=tmp_path / CHECKPOINT)
    assert [row["iteration"] for row in result.history] == [5, 6]
    _, rows = read_log(tmp_path / "train_log.csv")
    assert [row["iteration"] for row in rows] == [1, 2, 3, 4, 5, 6]
    assert load_optimizer_state(tmp_path / SIDECAR)[1] == 6


def test_non_finite_loss_keeps_the_last_good_checkpoint(
    tmp_path: Path, tiny_capture: SyntheticScene, monkeypatch: pytest.MonkeyPatch,
) -> None:
    evaluate = training.evaluate
    calls = []

    def failing_third_call(*args: object, **kwargs: object) -> object:
        calls.append(1)
        if len(calls) == 3:
            msg = "loss is nan"
            raise NonFiniteError(msg)
        return evaluate(*args, **kwargs)

    monkeypatch.setattr(training, "evaluate", failing_third_call)
    with pytest.raises(TrainingAbortedError) as info:
        fit_modeling_stage(tiny_capture.dataset, SHORT, out_dir=tmp_path)
    assert info.value.checkpoint == tmp_path / CHECKPOINT
    assert load_optimizer_state(tmp_path / SIDECAR)[1] == 2
    assert load_optimizer_state(tmp_path / FAILED_SIDECAR)[1] == 2
    assert len(load_scene(tmp_path / FAILED)) == len(load_scene(tmp_path / CHECKPOINT))


def test_fit_rejects_unusable_inputs(tiny_capture: SyntheticScene) -> None:
    with pytest.raises(InvalidParameterError):
        fit_modeling_stage(tiny_capture.dataset, FitOptions(iterations=1, holdout=(0, 1, 2)))
    dataset = tiny_capture.dataset
    meshless = Dataset.from_arrays(dataset.cameras, [[dataset.image(0, p) for p in range(dataset.camera_count)]])
    with pytest.raises(InvalidParameterError):
        fit_modeling_stage(meshless, FitOptions(iterations=1))


def test_patches_scatter_back() -> None:
    image = np.arange(6 * 6 * 3, dtype=np.float64).reshape(6, 6, 3)
    corners = np.array([[0, 0], [2, 3], [2, 3]])
    patches = extract_patches(image, corners, 3)
    assert patches.shape == (3, 3, 3, 3)
    np.testing.assert_array_equal(patches[1], image[2:5, 3:6])
    coverage = scatter_patches(np.ones_like(patches), corners, image.shape)
    assert coverage[0, 0, 0] == 1.0
    assert coverage[3, 4, 0] == 2.0
    assert coverage[5, 0, 0] == 0.0
    assert extract_patches(image, np.zeros((0, 2), dtype=np.int64), 3).shape == (0, 3, 3, 3)


def _hair_edit(capture: SyntheticScene) -> tuple[SplatSelection, EditTarget]:
    scene, mesh = capture.scene, capture.meshes[0]
    cam = capture.dataset.cameras[0]
    mask = render_label_mask(pose_splats(scene, mesh), cam, 1)
    image = capture.dataset.image(0, 0)
    edited = edit_image(EditRequest(image, mask, "recolor hair: hue+120", 0, Action.RECOLOR, "hue+120"), MockEditor()).image
    hair = np.flatnonzero(scene.label == 1)
    return SplatSelection(hair, np.ones(hair.size)), EditTarget(View(cam, edited, mesh, time=0.0), mask)


def test_editing_stage_runs_and_logs(tmp_path: Path, tiny_capture: SyntheticScene) -> None:
    selection, target = _hair_edit(tiny_capture)
    options = EditOptions(iterations=3, patch=8, patches_per_step=2, checkpoint_every=3)
    result = fit_editing_stage(
        tiny_capture.scene,
        selection,
        [target],
        options,
        rest_mesh=tiny_capture.meshes[0],
        out_dir=tmp_path,
    )
    assert len(result.scene) == len(tiny_capture.scene)
    assert [row["iteration"] for row in result.history] == [1, 2, 3]
    assert result.checkpoint == tmp_path / CHECKPOINT
    header, rows = read_log(tmp_path / "edit_log.csv")
    assert header["stage"] == "editing"
    assert header["lambda_rgb"] == "0.7"
    assert header["selected"] == str(len(selection))
    assert set(rows[0]) == {"iteration", "loss", "rgb", "anchor", "generator", "discriminator", "lr", "splats"}
    assert (tmp_path / FINAL).exists()


def test_editing_stage_without_iterations(tiny_capture: SyntheticScene) -> None:
    selection, target = _hair_edit(tiny_capture)
    result = fit_editing_stage(tiny_capture.scene, selection, [target], EditOptions(iterations=0))
    assert result.scene is tiny_capture.scene
    assert result.history == []


def test_editing_stage_rejects_empty_inputs(tiny_capture: SyntheticScene) -> None:
    selection, target = _hair_edit(tiny_capture)
    empty = SplatSelection(np.zeros(0, dtype=np.int64), np.zeros(0))
    with pytest.raises(NoTargetError):
        fit_editing_stage(tiny_capture.scene, empty, [target])
    with pytest.raises(InvalidParameterError):
        fit_editing_stage(tiny_capture.scene, selection, [])
