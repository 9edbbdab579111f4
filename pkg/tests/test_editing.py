"""Prompt refinement, the mock editor, the editing contract and edit regions."""
from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.spatial.transform import Rotation

from splatkit import quaternion
from splatkit.editing import (
    Action,
    EditPlan,
    EditRequest,
    EditResponse,
    Editor,
    Instruction,
    KeywordRefiner,
    MockEditor,
    Qualifier,
    Refiner,
    Region,
    edit_image,
    hue_shift,
    plan_to_region,
    refine_prompt,
    region_members,
    resolve_label,
    spawn_accessory,
    subject_frame,
)
from splatkit.exceptions import ContractViolationError, DimensionMismatchError, NoTargetError, PromptRefusedError
from splatkit.rig import pose_splats
from splatkit.segmentation import LABEL_NAMES
from splatkit.splat import Scene
from splatkit.synthetic import icosphere

if TYPE_CHECKING:
    from splatkit.synthetic import SyntheticScene


# Refinement


def test_recolor_prompt() -> None:
    plan = refine_prompt("make the hair red", LABEL_NAMES)
    assert plan.instructions == [Instruction(action=Action.RECOLOR, target="hair", style="red")]


def test_accessory_prompt_with_side() -> None:
    (instruction,) = refine_prompt("give the man an earring on his left ear", LABEL_NAMES).instructions
    assert instruction.action is Action.ADD_ACCESSORY
    assert instruction.target == "ear"
    assert instruction.qualifier is Qualifier.LEFT
    assert instruction.style == "earring"
    assert instruction.text == "add-accessory left ear: earring"


def test_hue_shift_prompt() -> None:
    (instruction,) = refine_prompt("hue +120 on the hair", LABEL_NAMES).instructions
    assert instruction.action is Action.RECOLOR
    assert instruction.style == "hue+120"
    assert hue_shift(instruction.style) == 120.0


def test_multi_clause_prompt() -> None:
    plan = refine_prompt("make her older and remove the neck", LABEL_NAMES)
    assert [(i.action, i.target, i.style) for i in plan.instructions] == [
        (Action.RESTYLE, "face", "older"),
        (Action.REMOVE, "neck", ""),
    ]


@pytest.mark.parametrize("prompt", ["", "   ", "hello there"])
def test_unreadable_prompts_are_refused(prompt: str) -> None:
    with pytest.raises(PromptRefusedError):
        refine_prompt(prompt, LABEL_NAMES)


def test_unknown_region_has_no_target() -> None:
    with pytest.raises(NoTargetError):
        refine_prompt("dye the tail red", LABEL_NAMES)
    with pytest.raises(NoTargetError):
        refine_prompt("make the ears red", {1: "hair"})


def test_plan_models_validate() -> None:
    assert isinstance(KeywordRefiner(), Refiner)
    with pytest.raises(ValidationError):
        Instruction(action="recolor", target=0)
    with pytest.raises(ValidationError):
        Instruction(action="shave", target="hair")
    with pytest.raises(ValidationError):
        EditPlan(instructions=[])
    assert Instruction(action="remove", target=2).text == "remove 2"


# Mock editor and contract


def _request(image: np.ndarray, mask: np.ndarray, action: Action, style: str = "") -> EditRequest:
    return EditRequest(image, mask, f"{action.value}: {style}", 0, action, style)


def _left_half(shape: tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=np.bool_)
    mask[:, : shape[1] // 2] = True
    return mask


def test_hue_rotation_turns_red_green() -> None:
    image = np.zeros((4, 6, 3))
    image[..., 0] = 1.0
    mask = _left_half((4, 6))
    out = edit_image(_request(image, mask, Action.RECOLOR, "hue+120"), MockEditor()).image
    np.testing.assert_allclose(out[mask], np.tile([0.0, 1.0, 0.0], (mask.sum(), 1)), atol=1e-9)
    np.testing.assert_array_equal(out[~mask], image[~mask])


def test_named_recolor_and_restyles() -> None:
    image = np.full((4, 4, 3), 0.5)
    mask = np.ones((4, 4), dtype=np.bool_)
    blue = MockEditor().edit(_request(image, mask, Action.RECOLOR, "blue")).image
    assert np.all(blue[..., 2] > blue[..., 0])
    darker = MockEditor().edit(_request(image, mask, Action.RESTYLE, "darker")).image
    np.testing.assert_allclose(darker, 0.35)
    first = MockEditor().edit(_request(image + 0.1, mask, Action.RESTYLE, "vintage")).image
    again = MockEditor().edit(_request(image + 0.1, mask, Action.RESTYLE, "vintage")).image
    np.testing.assert_array_equal(first, again)


def test_accessory_is_stamped_at_the_mask_centroid() -> None:
    image = np.zeros((21, 21, 3))
    mask = np.zeros((21, 21), dtype=np.bool_)
    mask[6:15, 6:15] = True
    out = MockEditor().edit(_request(image, mask, Action.ADD_ACCESSORY, "red earring")).image
    assert out[10, 10, 0] > 0.9
    assert out[10, 10, 1] == 0.0
    assert not out[0, 0].any()


def test_remove_fills_from_outside() -> None:
    image = np.zeros((3, 5, 3))
    image[:, :2] = 0.2
    image[:, 2] = 1.0
    image[:, 3:] = 0.2
    mask = np.zeros((3, 5), dtype=np.bool_)
    mask[:, 2] = True
    out = MockEditor().edit(_request(image, mask, Action.REMOVE)).image
    np.testing.assert_allclose(out, 0.2)


def test_empty_mask_returns_the_image() -> None:
    image = np.random.default_rng(0).random((4, 4, 3))
    out = MockEditor().edit(_request(image, np.zeros((4, 4), dtype=np.bool_), Action.RESTYLE)).image
    np.testing.assert_array_equal(out, image)
    assert isinstance(MockEditor(), Editor)


class _Brighten:
    def __init__(self, amount: float) -> None:
        self.amount = amount

    def edit(self, request: EditRequest) -> EditResponse:
        return EditResponse(request.image + self.amount)


class _Crop:
    def edit(self, request: EditRequest) -> EditResponse:
        return EditResponse(request.image[1:])


def test_contract_enforcement() -> None:
    image = np.full((4, 4, 3), 0.5)
    mask = _left_half((4, 4))
    request = _request(image, mask, Action.RESTYLE)
    edit_image(request, _Brighten(1.0 / 255.0))
    with pytest.raises(ContractViolationError):
        edit_image(request, _Brighten(0.1))
    with pytest.raises(ContractViolationError):
        edit_image(request, _Crop())
    with pytest.raises(DimensionMismatchError):
        edit_image(_request(image, np.ones((3, 4), dtype=np.bool_), Action.RESTYLE), MockEditor())


# Regions


def test_subject_frame_follows_the_mesh() -> None:
    rest = icosphere(1)
    center, axis = subject_frame(None, None)
    np.testing.assert_array_equal(center, 0.0)
    np.testing.assert_array_equal(axis, [1.0, 0.0, 0.0])
    turn = Rotation.from_euler("y", 90, degrees=True)
    moved = rest.transformed(turn.as_matrix(), (0.0, 1.0, 0.0))
    center, axis = subject_frame(moved, rest)
    np.testing.assert_allclose(center, [0.0, 1.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(axis, turn.apply([1.0, 0.0, 0.0]), atol=1e-9)


def _row(labels: list[int], xs: list[float]) -> Scene:
    n = len(xs)
    return Scene.from_arrays(
        mu=[[x, 0.0, 0.0] for x in xs],
        q=np.tile(quaternion.IDENTITY, (n, 1)),
        s=np.full((n, 3), 0.1),
        opacity=np.full(n, 0.8),
        color=np.full((n, 3), 0.5),
        label=labels,
    )


def test_resolve_label() -> None:
    scene = _row([2, 2, 1], [0.0, 0.5, 1.0])
    assert resolve_label(2, scene, LABEL_NAMES) == (2, None)
    assert resolve_label("ears", scene, LABEL_NAMES) == (2, Region("face", lateral=True))
    assert resolve_label("hair", scene, LABEL_NAMES) == (1, Region("hair"))
    with pytest.raises(NoTargetError):
        resolve_label(3, scene, LABEL_NAMES)
    with pytest.raises(NoTargetError):
        resolve_label("neck", scene, LABEL_NAMES)


def test_region_members() -> None:
    world = _row([2, 2, 2, 2, 1], [-1.0, -0.5, 0.1, 0.9, 1.0])
    frame = (np.zeros(3), np.array([1.0, 0.0, 0.0]))
    lateral = Region("face", lateral=True)
    assert region_members(world, 2, lateral, Qualifier.NONE, frame).tolist() == [True, False, False, True, False]
    assert region_members(world, 2, lateral, Qualifier.LEFT, frame).tolist() == [False, False, False, True, False]
    assert region_members(world, 2, None, Qualifier.RIGHT, frame).tolist() == [True, True, False, False, False]


def _meshes(capture: SyntheticScene):  # noqa: ANN202
    return lambda t: capture.meshes[int(t)]


def test_plan_to_region_selects_the_label(tiny_capture: SyntheticScene) -> None:
    scene = tiny_capture.scene
    nodes = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
    instruction = Instruction(action=Action.RECOLOR, target="hair", style="red")
    result = plan_to_region(
        instruction,
        scene,
        tiny_capture.dataset.cameras,
        nodes,
        mesh_at=_meshes(tiny_capture),
        label_names=LABEL_NAMES,
    )
    assert set(result.masks) == set(nodes)
    assert result.grid.shape == (24, 24)
    assert len(result.selection) > 0
    weights = result.selection.weights
    hair = scene.label[result.selection.indices] == 1
    assert weights[hair].sum() > 0.5 * weights.sum()


def test_left_qualifier_picks_the_subject_left(tiny_capture: SyntheticScene) -> None:
    scene = tiny_capture.scene
    instruction = Instruction(action=Action.ADD_ACCESSORY, target="ear", qualifier=Qualifier.LEFT, style="earring")
    result = plan_to_region(
        instruction,
        scene,
        tiny_capture.dataset.cameras,
        [(0.0, 0.0), (0.0, 1.0), (0.0, 2.0)],
        mesh_at=_meshes(tiny_capture),
        rest_mesh=tiny_capture.meshes[0],
        label_names=LABEL_NAMES,
    )
    world = pose_splats(scene, tiny_capture.meshes[0])
    mean_x = np.average(world.mu[result.selection.indices, 0], weights=result.selection.weights)
    assert mean_x > 0


def test_plan_to_region_without_a_hit(tiny_capture: SyntheticScene) -> None:
    instruction = Instruction(action=Action.REMOVE, target=9)
    with pytest.raises(NoTargetError):
        plan_to_region(instruction, tiny_capture.scene, tiny_capture.dataset.cameras, [(0.0, 0.0)], label_names=LABEL_NAMES)


def test_spawn_accessory(tiny_capture: SyntheticScene) -> None:
    scene = tiny_capture.scene
    instruction = Instruction(action=Action.ADD_ACCESSORY, target="hair", style="red hat")
    result = plan_to_region(
        instruction,
        scene,
        tiny_capture.dataset.cameras,
        [(0.0, 0.0)],
        mesh_at=_meshes(tiny_capture),
        label_names=LABEL_NAMES,
    )
    rng = np.random.default_rng(0)
    grown, added = spawn_accessory(scene, result.selection, tiny_capture.meshes[0], "red hat", rng, count=5)
    assert len(grown) == len(scene) + 5
    assert added.tolist() == list(range(len(scene), len(scene) + 5))
    assert grown.decoupled[added].all()
    assert not grown.decoupled[: len(scene)].any()
    assert set(grown.label[added].tolist()) == {int(scene.label.max()) + 1}
    np.testing.assert_allclose(grown.color[added], np.tile([1.0, 0.0, 0.0], (5, 1)))
