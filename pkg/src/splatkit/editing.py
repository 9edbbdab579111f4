"""Edit plans, prompt refinement, conditional image editing and edit regions.

A prompt is refined into an :class:`EditPlan` of atomic instructions. Each
instruction is resolved to a region of the scene (a label, optionally narrowed to
a named part and a side of the subject), turned into per-node image masks and a
splat selection, and sent with each pre-edit render to an image editor that must
leave pixels outside the mask alone.

Left and right are the subject's: with ``subject_left = (1, 0, 0)`` a subject
facing +z has its left side at +x, which a camera on the +z axis sees on the
right half of the image.
"""
from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import StrEnum
from typing import TYPE_CHECKING, Annotated, Protocol, runtime_checkable

import numpy as np
from loguru import logger
from matplotlib.colors import hsv_to_rgb, is_color_like, rgb_to_hsv, to_rgb
from pydantic import BaseModel, ConfigDict, Field
from scipy.ndimage import distance_transform_edt
from scipy.spatial.transform import Rotation

from .exceptions import ContractViolationError, DimensionMismatchError, NoTargetError, PromptRefusedError
from .masks import DEFAULT_MIN_WEIGHT, DEFAULT_THRESHOLD, build_mask_grid, select_splats
from .renderer import render_label_mask
from .rig import pose_splats
from .splat import Scene

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping, Sequence
    from pathlib import Path

    from numpy.typing import ArrayLike, NDArray

    from .camera import Camera
    from .masks import MaskGrid, SplatSelection
    from .rig import MeshFrame

    FloatArray = NDArray[np.float64]

CONTRACT_TOLERANCE = 2.0 / 255.0
LATERAL_FRACTION = 0.6
ACCESSORY_COLOR = (1.0, 0.84, 0.0)
SUBJECT_LEFT = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class ServiceOptions:
    """Endpoints and transport options of the remote refiner and editor."""

    editor_url: str = ""
    refiner_url: str = ""
    token: str = ""
    timeout: float = 120.0
    retries: int = 2
    backoff: float = 0.5
    cache_dir: Path | None = None


class Action(StrEnum):
    """What an instruction does to its region."""

    RESTYLE = "restyle"
    RECOLOR = "recolor"
    ADD_ACCESSORY = "add-accessory"
    REMOVE = "remove"


class Qualifier(StrEnum):
    """Side of the subject an instruction is restricted to."""

    NONE = ""
    LEFT = "left"
    RIGHT = "right"


class Instruction(BaseModel):
    """One atomic edit."""

    model_config = ConfigDict(frozen=True)

    action: Action
    target: Annotated[int, Field(gt=0)] | Annotated[str, Field(min_length=1)]
    qualifier: Qualifier = Qualifier.NONE
    style: str = ""

    @property
    def text(self) -> str:
        """Instruction as sent to an image editor."""
        side = f" {self.qualifier.value}" if self.qualifier is not Qualifier.NONE else ""
        style = f": {self.style}" if self.style else ""
        return f"{self.action.value}{side} {self.target}{style}"


class EditPlan(BaseModel):
    """Ordered, non-empty list of instructions."""

    model_config = ConfigDict(frozen=True)

    instructions: Annotated[list[Instruction], Field(min_length=1)]


@dataclass(frozen=True)
class Region:
    """Named part of the subject: a base label, optionally its lateral extremes."""

    label: str
    lateral: bool = False


REGIONS: dict[str, Region] = {
    "hair": Region("hair"),
    "face": Region("face"),
    "skin": Region("face"),
    "neck": Region("neck"),
    "ear": Region("face", lateral=True),
    "ears": Region("face", lateral=True),
    "cheek": Region("face", lateral=True),
}
SUBJECT_WORDS = frozenset({"man", "woman", "person", "subject", "he", "she", "him", "her", "boy", "girl"})
ACCESSORIES = ("earring", "hat", "glasses", "necklace", "piercing", "flower", "ring")
RESTYLES = ("older", "younger", "darker", "brighter", "vintage", "cartoon")
_ACTION_WORDS: tuple[tuple[Action, frozenset[str]], ...] = (
    (Action.ADD_ACCESSORY, frozenset({"wear", "wears", "wearing", "add", "attach", "put"})),
    (Action.REMOVE, frozenset({"remove", "erase", "delete", "without"})),
    (Action.RECOLOR, frozenset({"recolor", "recolour", "color", "colour", "dye", "paint", "hue"})),
    (Action.RESTYLE, frozenset({"make", "turn", "style", "restyle", *RESTYLES})),
)
_HUE_SHIFT = re.compile(r"hue\s*([+-]\d+(?:\.\d+)?)")
_CLAUSES = re.compile(r"\band\b|\bthen\b|[;,.]")


def color_word(words: Sequence[str]) -> str | None:
    """First word that names a color."""
    for word in words:
        if len(word) >= 3 and word.isalpha() and word not in REGIONS and is_color_like(word):  # noqa: PLR2004
            return word
    return None


def hue_shift(style: str) -> float | None:
    """Degrees of a ``hue+N`` / ``hue-N`` style, if it is one."""
    match = _HUE_SHIFT.search(style)
    return float(match.group(1)) if match else None


@runtime_checkable
class Refiner(Protocol):
    """Turns a free-text prompt into an edit plan."""

    def refine(self, prompt: str, labels: Mapping[int, str]) -> EditPlan:
        """Plan for ``prompt`` over the named ``labels``; raises :class:`PromptRefusedError`."""
        ...


class KeywordRefiner:
    """Rule-based refiner: clauses, action keywords, region words and side words."""

    def refine(self, prompt: str, labels: Mapping[int, str]) -> EditPlan:  # noqa: D102
        if not prompt or not prompt.strip():
            msg = "The prompt is empty."
            raise PromptRefusedError(msg)
        clauses = [c.strip() for c in _CLAUSES.split(prompt.lower()) if c.strip()]
        instructions = [self._clause(clause, labels) for clause in clauses]
        instructions = [i for i in instructions if i is not None]
        if not instructions:
            msg = f"No edit could be read from {prompt!r}."
            raise PromptRefusedError(msg)
        plan = EditPlan(instructions=instructions)
        logger.info(f"Refined prompt into {len(plan.instructions)} instruction(s): {[i.text for i in plan.instructions]}")
        return plan

    def _clause(self, clause: str, labels: Mapping[int, str]) -> Instruction | None:
        words = re.findall(r"[a-z]+", clause.replace("'s", ""))
        action = self._action(words, clause)
        if action is None:
            return None
        target = self._target(words, labels, clause)
        qualifier = Qualifier.LEFT if "left" in words else Qualifier.RIGHT if "right" in words else Qualifier.NONE
        return Instruction(action=action, target=target, qualifier=qualifier, style=self._style(action, words, clause))

    @staticmethod
    def _action(words: Sequence[str], clause: str) -> Action | None:
        if any(word in ACCESSORIES for word in words):
            return Action.ADD_ACCESSORY
        for action, keywords in _ACTION_WORDS:
            if action is Action.RESTYLE and color_word(words):
                return Action.RECOLOR
            if keywords.intersection(words):
                return action
        if color_word(words) or hue_shift(clause) is not None:
            return Action.RECOLOR
        return None

    @staticmethod
    def _target(words: Sequence[str], labels: Mapping[int, str], clause: str) -> str:
        names = set(labels.values())
        for word in words:
            region = REGIONS.get(word)
            if region is not None:
                if region.label not in names:
                    msg = f"Region {word!r} needs label {region.label!r}, which the scene does not have."
                    raise NoTargetError(msg)
                return word
            if word in names:
                return word
        if SUBJECT_WORDS.intersection(words) and "face" in names:
            return "face"
        msg = f"No known region in {clause!r}."
        raise NoTargetError(msg)

    @staticmethod
    def _style(action: Action, words: Sequence[str], clause: str) -> str:
        color = color_word(words)
        match action:
            case Action.RECOLOR:
                shift = hue_shift(clause)
                if shift is not None:
                    return f"hue{shift:+g}"
                return color or ""
            case Action.ADD_ACCESSORY:
                item = next(word for word in words if word in ACCESSORIES)
                return f"{color} {item}" if color else item
            case Action.RESTYLE:
                return next((word for word in words if word in RESTYLES), "")
            case _:
                return ""


def refine_prompt(prompt: str, labels: Mapping[int, str], refiner: Refiner | None = None) -> EditPlan:
    """Plan for ``prompt`` from ``refiner``, the keyword refiner by default."""
    if not prompt or not prompt.strip():
        msg = "The prompt is empty."
        raise PromptRefusedError(msg)
    return (refiner or KeywordRefiner()).refine(prompt, labels)


@dataclass(frozen=True, eq=False)
class EditRequest:
    """Source image, edit mask, instruction text and seed sent to an editor."""

    image: FloatArray
    mask: NDArray[np.bool_]
    instruction: str
    seed: int = 0
    action: Action = Action.RESTYLE
    style: str = ""

    @classmethod
    def for_instruction(
        cls, image: FloatArray, mask: NDArray[np.bool_], instruction: Instruction, seed: int = 0,
    ) -> EditRequest:
        """Request carrying ``instruction``'s text, action and style."""
        return cls(image, mask, instruction.text, seed, instruction.action, instruction.style)


@dataclass(frozen=True, eq=False)
class EditResponse:
    """Edited image and status reported by an editor."""

    image: FloatArray
    status: str = "ok"


@runtime_checkable
class Editor(Protocol):
    """Conditional image editor."""

    def edit(self, request: EditRequest) -> EditResponse:
        """Edited version of ``request.image``."""
        ...


def _contrast(image: FloatArray, gain: float) -> FloatArray:
    return np.clip(0.5 + (image - 0.5) * gain, 0.0, 1.0)


class MockEditor:
    """Deterministic local editor: a pure function of the request.

    recolor shifts or sets the hue, restyle applies a contrast curve, add-accessory
    stamps a shaded disk at the mask centroid and remove fills the mask from the
    nearest outside pixel.
    """

    def edit(self, request: EditRequest) -> EditResponse:  # noqa: D102
        image = np.asarray(request.image, dtype=np.float64)
        mask = np.asarray(request.mask, dtype=np.bool_)
        if not mask.any():
            return EditResponse(image.copy())
        match request.action:
            case Action.RECOLOR:
                edited = self._recolor(image, request.style)
            case Action.RESTYLE:
                edited = self._restyle(image, request.style, request.seed)
            case Action.ADD_ACCESSORY:
                edited = self._accessory(image, mask, request.style)
            case Action.REMOVE:
                edited = self._remove(image, mask)
        return EditResponse(np.where(mask[..., None], edited, image))

    @staticmethod
    def _recolor(image: FloatArray, style: str) -> FloatArray:
        hsv = rgb_to_hsv(np.clip(image, 0.0, 1.0))
        shift = hue_shift(style)
        if shift is not None:
            hsv[..., 0] = (hsv[..., 0] + shift / 360.0) % 1.0
        else:
            name = color_word(style.split()) or "red"
            target = rgb_to_hsv(np.array(to_rgb(name)))
            hsv[..., 0] = target[0]
            hsv[..., 1] = np.maximum(hsv[..., 1], 0.5 * target[1])
        return hsv_to_rgb(hsv)

    @staticmethod
    def _restyle(image: FloatArray, style: str, seed: int) -> FloatArray:
        match style:
            case "older":
                gray = image.mean(axis=-1, keepdims=True)
                return _contrast(0.6 * image + 0.4 * gray, 1.3)
            case "younger":
                return _contrast(image, 0.85)
            case "darker":
                return image * 0.7
            case "brighter":
                return 1.0 - (1.0 - image) * 0.7
            case _:
                return _contrast(image, float(np.random.default_rng(seed).uniform(1.2, 1.6)))

    @staticmethod
    def _accessory(image: FloatArray, mask: NDArray[np.bool_], style: str) -> FloatArray:
        ys, xs = np.nonzero(mask)
        cy, cx = ys.mean(), xs.mean()
        radius = max(1.5, 0.35 * np.sqrt(ys.size / np.pi))
        color = np.array(to_rgb(color_word(style.split()) or ACCESSORY_COLOR))
        yy, xx = np.mgrid[: image.shape[0], : image.shape[1]]
        dist = np.hypot(yy - cy, xx - cx)
        inside = dist <= radius
        shade = 0.75 + 0.25 * (1.0 - dist / radius)
        return np.where(inside[..., None], np.clip(color * shade[..., None], 0.0, 1.0), image)

    @staticmethod
    def _remove(image: FloatArray, mask: NDArray[np.bool_]) -> FloatArray:
        if mask.all():
            return np.zeros_like(image)
        _, (iy, ix) = distance_transform_edt(mask, return_indices=True)
        return image[iy, ix]


def edit_image(request: EditRequest, editor: Editor) -> EditResponse:
    """Run ``editor`` and enforce the editing contract.

    The response must keep the request's dimensions and may not move any pixel
    outside the mask by more than 2/255 per channel.
    """
    image = np.asarray(request.image)
    if image.shape[:2] != np.shape(request.mask):
        msg = f"Mask {np.shape(request.mask)} does not match image {image.shape[:2]}."
        raise DimensionMismatchError(msg)
    response = editor.edit(request)
    edited = np.asarray(response.image)
    if edited.shape != image.shape:
        msg = f"Editor returned shape {edited.shape} for an image of shape {image.shape}."
        raise ContractViolationError(msg)
    outside = ~np.asarray(request.mask, dtype=np.bool_)
    drift = np.abs(edited - image)[outside]
    if drift.size and float(drift.max()) > CONTRACT_TOLERANCE + 1e-12:
        msg = f"Editor changed pixels outside the mask by up to {float(drift.max()):.4f}."
        raise ContractViolationError(msg)
    return response


# Regions


@dataclass(frozen=True, eq=False)
class RegionResult:
    """Splats an instruction edits and the per-node masks it was derived from."""

    selection: SplatSelection
    masks: dict[tuple[float, float], NDArray[np.bool_]]
    grid: MaskGrid


def subject_frame(
    mesh: MeshFrame | None, rest: MeshFrame | None, left: ArrayLike = SUBJECT_LEFT,
) -> tuple[FloatArray, FloatArray]:
    """Center of ``mesh`` and the subject-left axis carried along by its best-fit rotation from ``rest``."""
    axis = np.asarray(left, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    if mesh is None:
        return np.zeros(3), axis
    center = mesh.vertices.mean(axis=0)
    if rest is None or rest is mesh:
        return center, axis
    rotation, _ = Rotation.align_vectors(mesh.vertices - center, rest.vertices - rest.vertices.mean(axis=0))
    return center, rotation.apply(axis)


def resolve_label(target: int | str, scene: Scene, label_names: Mapping[int, str]) -> tuple[int, Region | None]:
    """Label id and named region of an instruction target."""
    present = set(np.unique(scene.label).tolist())
    if isinstance(target, int):
        if target not in present:
            msg = f"Label {target} does not occur in the scene."
            raise NoTargetError(msg)
        return target, None
    region = REGIONS.get(target, Region(target))
    ids = [k for k, name in label_names.items() if name == region.label]
    if not ids or ids[0] not in present:
        msg = f"Region {target!r} does not resolve to a label of the scene."
        raise NoTargetError(msg)
    return ids[0], region


def region_members(
    world: Scene,
    label: int,
    region: Region | None,
    qualifier: Qualifier,
    frame: tuple[FloatArray, FloatArray],
) -> NDArray[np.bool_]:
    """Splats of ``world`` inside the region, on the requested side."""
    members = world.label == label
    center, axis = frame
    side = (world.mu - center) @ axis
    if region is not None and region.lateral and members.any():
        reach = np.abs(side[members]).max()
        members &= np.abs(side) >= LATERAL_FRACTION * reach
    match qualifier:
        case Qualifier.LEFT:
            members &= side > 0
        case Qualifier.RIGHT:
            members &= side < 0
    return members


def plan_to_region(  # noqa: PLR0913
    instruction: Instruction,
    scene: Scene,
    cameras: Sequence[Camera],
    nodes: Sequence[tuple[float, float]],
    *,
    mesh_at: Callable[[float], MeshFrame | None] | None = None,
    rest_mesh: MeshFrame | None = None,
    label_names: Mapping[int, str] | None = None,
    subject_left: ArrayLike = SUBJECT_LEFT,
    w_min: float = DEFAULT_MIN_WEIGHT,
    threshold: float = DEFAULT_THRESHOLD,
    workers: int = 1,
) -> RegionResult:
    """Masks and splat selection of one instruction over the ``(t, p)`` nodes.

    A plain label target renders that label's mask per node; named parts and
    side qualifiers narrow the label to the qualifying splats before rendering.
    """
    label, region = resolve_label(instruction.target, scene, label_names or {})
    narrow = instruction.qualifier is not Qualifier.NONE or (region is not None and region.lateral)

    def poser(t: float) -> Scene:
        mesh = mesh_at(t) if mesh_at is not None else None
        return scene if mesh is None else pose_splats(scene, mesh)

    def node_mask(node: tuple[float, float]) -> NDArray[np.bool_]:
        t, p = node
        world = poser(t)
        cam = cameras[round(p)]
        if not narrow:
            return render_label_mask(world, cam, label)
        frame = subject_frame(mesh_at(t) if mesh_at is not None else None, rest_mesh, subject_left)
        members = region_members(world, label, region, instruction.qualifier, frame)
        return render_label_mask(world.replace(label=members.astype(np.int64)), cam, 1)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_node = list(pool.map(node_mask, nodes))
    else:
        per_node = [node_mask(node) for node in nodes]
    masks = {(float(t), float(p)): mask for (t, p), mask in zip(nodes, per_node, strict=True)}
    grid = build_mask_grid({node: mask.astype(np.float64) for node, mask in masks.items()})
    selection = select_splats(poser, cameras, grid, list(masks), w_min, threshold=threshold, workers=workers)
    if len(selection) == 0:
        msg = f"{instruction.text!r} selects no splats."
        raise NoTargetError(msg)
    logger.info(f"{instruction.text!r}: {len(selection)} splats over {len(masks)} nodes")
    return RegionResult(selection, masks, grid)


def spawn_accessory(  # noqa: PLR0913
    scene: Scene,
    selection: SplatSelection,
    mesh: MeshFrame | None,
    style: str,
    rng: np.random.Generator,
    count: int = 12,
) -> tuple[Scene, NDArray[np.int64]]:
    """Append decoupled splats at the selected region, pushed out along its mean normal.

    The new splats carry a fresh label. Returns the grown scene and their indices.
    """
    world = scene if mesh is None else pose_splats(scene, mesh)
    idx = selection.indices
    weights = selection.weights if selection.weights.sum() > 0 else np.ones(idx.size)
    centroid = np.average(world.mu[idx], axis=0, weights=weights)
    bound = idx[world.bound[idx]]
    if mesh is not None and bound.size:
        normal = mesh.normals()[world.triangle[bound]].mean(axis=0)
    else:
        normal = centroid - world.mu.mean(axis=0)
    norm = np.linalg.norm(normal)
    normal = normal / norm if norm > 0 else np.array([0.0, 0.0, 1.0])
    size = float(np.mean(world.s[idx]))
    center = centroid + 2.0 * size * normal
    color = np.array(to_rgb(color_word(style.split()) or ACCESSORY_COLOR))
    accessory = Scene.from_arrays(
        mu=center + rng.normal(0.0, size, size=(count, 3)),
        q=np.tile([1.0, 0.0, 0.0, 0.0], (count, 1)),
        s=np.full((count, 3), 0.5 * size),
        opacity=np.full(count, 0.9),
        color=np.tile(color, (count, 1)),
        label=np.full(count, int(scene.label.max(initial=0)) + 1),
    )
    accessory = accessory.replace(decoupled=np.ones(count, dtype=np.bool_))
    grown = scene.concat(accessory)
    logger.info(f"Spawned {count} accessory splats ({style or 'default'}) with label {int(accessory.label[0])}")
    return grown, np.arange(len(scene), len(grown), dtype=np.int64)


__all__ = [
    "REGIONS",
    "Action",
    "EditPlan",
    "EditRequest",
    "EditResponse",
    "Editor",
    "Instruction",
    "KeywordRefiner",
    "MockEditor",
    "Qualifier",
    "Refiner",
    "Region",
    "RegionResult",
    "ServiceOptions",
    "color_word",
    "edit_image",
    "hue_shift",
    "plan_to_region",
    "refine_prompt",
    "region_members",
    "resolve_label",
    "spawn_accessory",
    "subject_frame",
]
