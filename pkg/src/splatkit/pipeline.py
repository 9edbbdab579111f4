"""Prompt-driven editing of a reconstructed scene.

refine the prompt -> locate each instruction's region -> edit every node's
render with the editor -> fit the scene to the edited renders.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from loguru import logger

from .editing import SUBJECT_LEFT, Action, EditRequest, edit_image, plan_to_region, refine_prompt, spawn_accessory
from .gradients import View
from .masks import DEFAULT_MIN_WEIGHT, DEFAULT_THRESHOLD, SplatSelection
from .renderer import render
from .rig import pose_splats
from .training import EditOptions, EditTarget, fit_editing_stage

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

    from .dataset import Dataset
    from .editing import EditPlan, Editor, Refiner
    from .rig import MeshFrame
    from .splat import Scene
    from .training import FitResult

    FloatArray = NDArray[np.float64]

Node = tuple[float, float]


@dataclass(frozen=True)
class PipelineOptions:
    """Region and service options of :func:`run_edit`."""

    workers: int = 4
    w_min: float = DEFAULT_MIN_WEIGHT
    threshold: float = DEFAULT_THRESHOLD
    accessory_splats: int = 12
    subject_left: tuple[float, float, float] = SUBJECT_LEFT
    seed: int = 0
    editing: EditOptions = field(default_factory=EditOptions)


@dataclass(frozen=True, eq=False)
class EditOutcome:
    """Everything an edit run produced."""

    plan: EditPlan
    scene: Scene
    selection: SplatSelection
    targets: list[EditTarget]
    result: FitResult
    before: dict[Node, FloatArray]


def dataset_nodes(dataset: Dataset) -> list[Node]:
    """``(time, pose)`` node of every dataset cell."""
    return [(dataset.times[t], float(p)) for t, p in dataset.cells()]


def render_nodes(scene: Scene, dataset: Dataset, nodes: Sequence[Node]) -> dict[Node, FloatArray]:
    """Render ``scene`` at every node."""
    frame_of = {time: t for t, time in enumerate(dataset.times)}
    out = {}
    for time, p in nodes:
        mesh = dataset.mesh(frame_of[time])
        world = scene if mesh is None else pose_splats(scene, mesh)
        out[time, p] = render(world, dataset.cameras[round(p)]).color
    return out


def contact_sheet(before: Sequence[ArrayLike], after: Sequence[ArrayLike]) -> FloatArray:
    """Before renders on the top row, after renders below."""
    return np.concatenate([np.concatenate(list(before), axis=1), np.concatenate(list(after), axis=1)], axis=0)


def run_edit(  # noqa: PLR0913
    scene: Scene,
    dataset: Dataset,
    prompt: str,
    *,
    refiner: Refiner | None = None,
    editor: Editor,
    label_names: Mapping[int, str],
    options: PipelineOptions | None = None,
    nodes: Sequence[Node] | None = None,
    out_dir: Path | None = None,
    progress: bool = False,
) -> EditOutcome:
    """Apply ``prompt`` to ``scene``.

    Instructions are applied in order: every instruction edits the output of the
    previous one at each node, and the union of their selections is the set of
    splats the editing stage treats as free.
    """
    options = options or PipelineOptions()
    plan = refine_prompt(prompt, label_names, refiner)
    nodes = dataset_nodes(dataset) if nodes is None else list(nodes)
    frame_of = {time: t for t, time in enumerate(dataset.times)}
    rest_mesh = dataset.mesh(0)
    rng = np.random.default_rng(options.seed)

    def mesh_at(time: float) -> MeshFrame | None:
        return dataset.mesh(frame_of[time])

    before = render_nodes(scene, dataset, nodes)
    edited = dict(before)
    masks = {node: np.zeros(image.shape[:2], dtype=np.bool_) for node, image in before.items()}
    free: SplatSelection | None = None

    for instruction in plan.instructions:
        region = plan_to_region(
            instruction,
            scene,
            dataset.cameras,
            nodes,
            mesh_at=mesh_at,
            rest_mesh=rest_mesh,
            label_names=label_names,
            subject_left=options.subject_left,
            w_min=options.w_min,
            threshold=options.threshold,
            workers=options.workers,
        )
        selection = region.selection
        if instruction.action is Action.ADD_ACCESSORY:
            scene, spawned = spawn_accessory(scene, selection, rest_mesh, instruction.style, rng, options.accessory_splats)
            selection = selection.extended(spawned)
        free = selection if free is None else free.union(selection)

        def edit_node(item: tuple[int, Node], instruction=instruction, region=region) -> FloatArray:  # noqa: ANN001
            index, node = item
            request = EditRequest.for_instruction(edited[node], region.masks[node], instruction, options.seed + index)
            return edit_image(request, editor).image

        with ThreadPoolExecutor(max_workers=max(options.workers, 1)) as pool:
            results = list(pool.map(edit_node, enumerate(nodes)))
        for node, image in zip(nodes, results, strict=True):
            edited[node] = image
            masks[node] |= region.masks[node]
        logger.info(f"Edited {len(nodes)} nodes for {instruction.text!r}")

    targets = [
        EditTarget(View(dataset.cameras[round(p)], edited[time, p], mesh_at(time), None, time), masks[time, p])
        for time, p in nodes
    ]
    result = fit_editing_stage(
        scene,
        free,
        targets,
        options.editing,
        reference=scene,
        rest_mesh=rest_mesh,
        out_dir=out_dir,
        progress=progress,
    )
    return EditOutcome(plan, result.scene, free, targets, result, before)


__all__ = ["EditOutcome", "PipelineOptions", "contact_sheet", "dataset_nodes", "render_nodes", "run_edit"]
