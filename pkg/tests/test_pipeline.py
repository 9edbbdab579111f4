"""End-to-end prompt editing with the mock editor."""
from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from splatkit.editing import Action, MockEditor
from splatkit.pipeline import PipelineOptions, contact_sheet, dataset_nodes, render_nodes, run_edit
from splatkit.segmentation import LABEL_NAMES
from splatkit.training import EditOptions

if TYPE_CHECKING:
    from pathlib import Path

    from splatkit.synthetic import SyntheticScene

QUICK = PipelineOptions(workers=2, accessory_splats=4, editing=EditOptions(iterations=2, patch=8, patches_per_step=2))
NODES = [(0.0, 0.0), (1.0, 1.0)]


def test_nodes_and_renders(tiny_capture: SyntheticScene) -> None:
    dataset = tiny_capture.dataset
    assert dataset_nodes(dataset) == [(0.0, 0.0), (0.0, 1.0), (0.0, 2.0), (1.0, 0.0), (1.0, 1.0), (1.0, 2.0)]
    renders = render_nodes(tiny_capture.scene, dataset, [(1.0, 2.0)])
    np.testing.assert_array_equal(renders[1.0, 2.0], dataset.image(1, 2))


def test_contact_sheet_layout() -> None:
    before = [np.zeros((2, 3, 3)), np.zeros((2, 3, 3))]
    after = [np.ones((2, 3, 3)), np.ones((2, 3, 3))]
    sheet = contact_sheet(before, after)
    assert sheet.shape == (4, 6, 3)
    assert not sheet[:2].any()
    assert sheet[2:].all()


def test_recolor_edit(tmp_path: Path, tiny_capture: SyntheticScene) -> None:
    outcome = run_edit(
        tiny_capture.scene,
        tiny_capture.dataset,
        "make the hair red",
        editor=MockEditor(),
        label_names=LABEL_NAMES,
        options=QUICK,
        nodes=NODES,
        out_dir=tmp_path,
    )
    assert [i.action for i in outcome.plan.instructions] == [Action.RECOLOR]
    assert len(outcome.targets) == len(NODES)
    assert len(outcome.selection) > 0
    assert len(outcome.scene) == len(tiny_capture.scene)
    for target, node in zip(outcome.targets, NODES, strict=True):
        assert target.mask.any()
        before = outcome.before[node]
        np.testing.assert_array_equal(target.view.target[~target.mask], before[~target.mask])
        assert not np.array_equal(target.view.target[target.mask], before[target.mask])
    assert (tmp_path / "edit_log.csv").exists()
    assert len(outcome.result.history) == 2


def test_accessory_edit_grows_the_scene(tiny_capture: SyntheticScene) -> None:
    outcome = run_edit(
        tiny_capture.scene,
        tiny_capture.dataset,
        "give her a red hat on the hair",
        editor=MockEditor(),
        label_names=LABEL_NAMES,
        options=QUICK,
        nodes=NODES,
    )
    base = len(tiny_capture.scene)
    assert len(outcome.scene) == base + 4
    added = np.arange(base, base + 4)
    assert all(int(i) in outcome.selection for i in added)
    assert outcome.scene.decoupled[added].all()
