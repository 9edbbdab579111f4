"""Splat representation and pointwise Gaussian math.

A scene is stored column-wise in :class:`Scene` so the renderer and the reverse
pass can work on whole arrays; :class:`GaussianSplat` is the per-splat view used
at API boundaries and in tests.

Parameterisation: quaternions are (w, x, y, z) and unit length, scales are kept
linear in the scene and logarithmic in a :class:`ParamVector`, opacity passes
through a logistic in a :class:`ParamVector`.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, ClassVar, NamedTuple

import numpy as np
from scipy.special import expit, logit

from . import quaternion
from .exceptions import DegenerateCovarianceError, InvalidParameterError, LayoutError

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Iterator, Sequence

    from numpy.typing import ArrayLike, NDArray

    FloatArray = NDArray[np.float64]

UNIT_TOLERANCE = 1e-6
CONDITION_LIMIT = 1e12
OPACITY_EPS = 1e-7


@dataclass(frozen=True)
class MeshBinding:
    """Where a splat sits on a mesh triangle.

    ``offset`` is the splat position relative to the barycentric point, expressed
    in the triangle's tangent frame in scene units of the binding frame; its third
    component is the signed normal distance. ``rest_offset`` is the offset at
    binding time and anchors the tracking loss.
    """

    triangle: int
    barycentric: tuple[float, float, float]
    offset: tuple[float, float, float]
    rest_offset: tuple[float, float, float]
    bind_scale: float
    local_rotation: tuple[float, float, float, float]
    local_scale: tuple[float, float, float]

    def __post_init__(self) -> None:  # noqa: D105
        if self.triangle < 0:
            msg = f"Triangle id must be >= 0, got {self.triangle}."
            raise InvalidParameterError(msg)
        if abs(sum(self.barycentric) - 1.0) > 1e-9 or min(self.barycentric) < -1e-12:
            msg = f"Barycentric coordinates {self.barycentric} are not a convex combination."
            raise InvalidParameterError(msg)
        if self.bind_scale <= 0 or min(self.local_scale) <= 0:
            msg = "Binding scales must be > 0."
            raise InvalidParameterError(msg)

    @property
    def normal_offset(self) -> float:
        """Signed distance along the triangle normal at binding time (h)."""
        return self.offset[2]


@dataclass(frozen=True)
class GaussianSplat:
    """One anisotropic Gaussian with opacity, RGB color and semantic label."""

    mu: tuple[float, float, float]
    q: tuple[float, float, float, float]
    s: tuple[float, float, float]
    opacity: float
    color: tuple[float, float, float]
    label: int = 0
    binding: MeshBinding | None = None
    decoupled: bool = False

    def __post_init__(self) -> None:  # noqa: D105
        q = np.asarray(self.q, dtype=np.float64)
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > UNIT_TOLERANCE:
            msg = f"Quaternion {self.q} is not unit length (|q| = {norm})."
            raise InvalidParameterError(msg)
        object.__setattr__(self, "q", tuple(float(v) for v in q / norm))
        if min(self.s) <= 0:
            msg = f"Scale {self.s} must be strictly positive."
            raise InvalidParameterError(msg)
        if not 0.0 <= self.opacity <= 1.0:
            msg = f"Opacity {self.opacity} is outside [0, 1]."
            raise InvalidParameterError(msg)
        if min(self.color) < 0.0 or max(self.color) > 1.0:
            msg = f"Color {self.color} is outside [0, 1]."
            raise InvalidParameterError(msg)
        if self.label < 0:
            msg = f"Label must be >= 0, got {self.label}."
            raise InvalidParameterError(msg)

    @property
    def covariance(self) -> Covariance3:
        """World-space covariance."""
        return covariance_from_params(self.q, self.s)


@dataclass(frozen=True)
class Covariance3:
    """Symmetric positive-definite 3×3 covariance."""

    sigma: FloatArray

    def __post_init__(self) -> None:  # noqa: D105
        sigma = np.array(self.sigma, dtype=np.float64)
        if sigma.shape != (3, 3):
            msg = f"Covariance must be 3x3, got {sigma.shape}."
            raise InvalidParameterError(msg)
        if np.max(np.abs(sigma - sigma.T)) > 1e-12 * max(1.0, float(np.max(np.abs(sigma)))):
            msg = "Covariance is not symmetric."
            raise InvalidParameterError(msg)
        if np.min(np.linalg.eigvalsh(sigma)) <= 0:
            msg = "Covariance is not positive definite."
            raise InvalidParameterError(msg)
        sigma.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)


def covariance_matrices(q: ArrayLike, s: ArrayLike) -> FloatArray:
    """Vectorised ``R diag(s)² Rᵀ`` for already validated inputs."""
    r = quaternion.to_matrix(quaternion.normalize(q))
    s = np.asarray(s, dtype=np.float64)
    scaled = r * (s * s)[..., None, :]
    return scaled @ np.swapaxes(r, -1, -2)


def covariance_from_params(q: ArrayLike, s: ArrayLike) -> Covariance3:
    """Covariance of a splat with rotation ``q`` and per-axis scale ``s``."""
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if abs(float(np.linalg.norm(q)) - 1.0) > UNIT_TOLERANCE:
        msg = f"Quaternion {q} is not unit length."
        raise InvalidParameterError(msg)
    if np.any(s <= 0):
        msg = f"Scale {s} must be strictly positive."
        raise InvalidParameterError(msg)
    sigma = covariance_matrices(q, s)
    return Covariance3(0.5 * (sigma + sigma.T))


def gaussian_eval(mu: ArrayLike, sigma: Covariance3, x: ArrayLike) -> float:
    """Unnormalised Gaussian ``exp(-½ dᵀ Σ⁻¹ d)`` with ``d = x - mu``."""
    if np.linalg.cond(sigma.sigma) >= CONDITION_LIMIT:
        msg = "Covariance is too ill-conditioned to evaluate."
        raise DegenerateCovarianceError(msg)
    d = np.asarray(x, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    return float(np.exp(-0.5 * d @ np.linalg.solve(sigma.sigma, d)))


def _frozen(array: ArrayLike, dtype: type, shape: tuple[int, ...]) -> NDArray:
    out = np.array(array, dtype=dtype).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Scene:
    """Column-wise splat storage. Arrays are read-only; derive new scenes with :meth:`replace`.

    World columns (``mu``, ``q``, ``s``) of bound, non-decoupled splats are the
    values of the most recent :func:`splatkit.rig.pose_splats` call; the binding
    columns are authoritative for them.
    """

    mu: FloatArray
    q: FloatArray
    s: FloatArray
    opacity: FloatArray
    color: FloatArray
    label: NDArray[np.int64]
    decoupled: NDArray[np.bool_]
    bound: NDArray[np.bool_]
    triangle: NDArray[np.int64]
    barycentric: FloatArray
    offset: FloatArray
    rest_offset: FloatArray
    bind_scale: FloatArray
    local_rotation: FloatArray
    local_scale: FloatArray

    _shapes: ClassVar[dict[str, tuple[type, int | None]]] = {
        "mu": (np.float64, 3),
        "q": (np.float64, 4),
        "s": (np.float64, 3),
        "opacity": (np.float64, None),
        "color": (np.float64, 3),
        "label": (np.int64, None),
        "decoupled": (np.bool_, None),
        "bound": (np.bool_, None),
        "triangle": (np.int64, None),
        "barycentric": (np.float64, 3),
        "offset": (np.float64, 3),
        "rest_offset": (np.float64, 3),
        "bind_scale": (np.float64, None),
        "local_rotation": (np.float64, 4),
        "local_scale": (np.float64, 3),
    }

    def __post_init__(self) -> None:  # noqa: D105
        n = np.asarray(self.opacity).reshape(-1).shape[0]
        for name, (dtype, width) in self._shapes.items():
            shape = (n,) if width is None else (n, width)
            try:
                object.__setattr__(self, name, _frozen(getattr(self, name), dtype, shape))
            except ValueError as exc:
                msg = f"Scene column {name!r} does not fit {n} splats."
                raise LayoutError(msg) from exc

    def __len__(self) -> int:  # noqa: D105
        return int(self.opacity.shape[0])

    def __getitem__(self, index: int) -> GaussianSplat:  # noqa: D105
        binding = None
        if self.bound[index]:
            binding = MeshBinding(
                triangle=int(self.triangle[index]),
                barycentric=_tuple(self.barycentric[index]),
                offset=_tuple(self.offset[index]),
                rest_offset=_tuple(self.rest_offset[index]),
                bind_scale=float(self.bind_scale[index]),
                local_rotation=_tuple(self.local_rotation[index]),
                local_scale=_tuple(self.local_scale[index]),
            )
        return GaussianSplat(
            mu=_tuple(self.mu[index]),
            q=_tuple(self.q[index]),
            s=_tuple(self.s[index]),
            opacity=float(self.opacity[index]),
            color=_tuple(self.color[index]),
            label=int(self.label[index]),
            binding=binding,
            decoupled=bool(self.decoupled[index]),
        )

    def __iter__(self) -> Iterator[GaussianSplat]:  # noqa: D105
        return (self[i] for i in range(len(self)))

    @classmethod
    def empty(cls) -> Scene:
        """Scene without splats."""
        return cls.from_splats([])

    @classmethod
    def from_splats(cls, splats: Iterable[GaussianSplat]) -> Scene:
        """Build a scene from per-splat values."""
        items = list(splats)
        n = len(items)

        def column(getter: Callable[[GaussianSplat], object], width: int | None) -> FloatArray:
            if n == 0:
                return np.zeros((0,) if width is None else (0, width))
            return np.array([getter(sp) for sp in items], dtype=np.float64)

        def bound_value(name: str, default: object) -> Callable[[GaussianSplat], object]:
            return lambda sp: getattr(sp.binding, name) if sp.binding is not None else default

        return cls(
            mu=column(lambda sp: sp.mu, 3),
            q=column(lambda sp: sp.q, 4),
            s=column(lambda sp: sp.s, 3),
            opacity=column(lambda sp: sp.opacity, None),
            color=column(lambda sp: sp.color, 3),
            label=np.array([sp.label for sp in items], dtype=np.int64),
            decoupled=np.array([sp.decoupled for sp in items], dtype=np.bool_),
            bound=np.array([sp.binding is not None for sp in items], dtype=np.bool_),
            triangle=np.array([sp.binding.triangle if sp.binding else 0 for sp in items], dtype=np.int64),
            barycentric=column(bound_value("barycentric", (1.0, 0.0, 0.0)), 3),
            offset=column(bound_value("offset", (0.0, 0.0, 0.0)), 3),
            rest_offset=column(bound_value("rest_offset", (0.0, 0.0, 0.0)), 3),
            bind_scale=column(bound_value("bind_scale", 1.0), None),
            local_rotation=column(bound_value("local_rotation", (1.0, 0.0, 0.0, 0.0)), 4),
            local_scale=column(bound_value("local_scale", (1.0, 1.0, 1.0)), 3),
        )

    @classmethod
    def from_arrays(  # noqa: PLR0913
        cls,
        mu: ArrayLike,
        q: ArrayLike,
        s: ArrayLike,
        opacity: ArrayLike,
        color: ArrayLike,
        label: ArrayLike | None = None,
    ) -> Scene:
        """Free (unbound) splats from world-space columns."""
        opacity = np.asarray(opacity, dtype=np.float64).reshape(-1)
        n = opacity.shape[0]
        return cls(
            mu=mu,
            q=quaternion.normalize(np.asarray(q, dtype=np.float64).reshape(n, 4)) if n else np.zeros((0, 4)),
            s=s,
            opacity=opacity,
            color=color,
            label=np.zeros(n, dtype=np.int64) if label is None else label,
            decoupled=np.zeros(n, dtype=np.bool_),
            bound=np.zeros(n, dtype=np.bool_),
            triangle=np.zeros(n, dtype=np.int64),
            barycentric=np.tile([1.0, 0.0, 0.0], (n, 1)),
            offset=np.zeros((n, 3)),
            rest_offset=np.zeros((n, 3)),
            bind_scale=np.ones(n),
            local_rotation=np.tile(quaternion.IDENTITY, (n, 1)),
            local_scale=np.ones((n, 3)),
        )

    @property
    def posable(self) -> NDArray[np.bool_]:
        """Splats whose world values follow the mesh."""
        return self.bound & ~self.decoupled

    def replace(self, **columns: ArrayLike) -> Scene:
        """Copy with some columns replaced."""
        return dataclasses.replace(self, **columns)

    def take(self, indices: ArrayLike) -> Scene:
        """Splats at ``indices`` in the given order."""
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        return Scene(**{name: getattr(self, name)[idx] for name in self._shapes})

    def concat(self, other: Scene) -> Scene:
        """This scene followed by ``other``."""
        return Scene(**{name: np.concatenate([getattr(self, name), getattr(other, name)]) for name in self._shapes})

    def columns(self) -> dict[str, NDArray]:
        """Every column by name."""
        return {name: getattr(self, name) for name in self._shapes}

    def validate(self) -> None:
        """Check the splat invariants on every row."""
        if len(self) == 0:
            return
        norms = np.linalg.norm(self.q, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            msg = f"Splat {bad} has a non-unit quaternion."
            raise InvalidParameterError(msg)
        if np.any(self.s <= 0):
            msg = f"Splat {int(np.argmax(np.any(self.s <= 0, axis=1)))} has a non-positive scale."
            raise InvalidParameterError(msg)
        if np.any((self.opacity < 0) | (self.opacity > 1)) or np.any((self.color < 0) | (self.color > 1)):
            msg = "Opacity or color outside [0, 1]."
            raise InvalidParameterError(msg)


def _tuple(row: FloatArray) -> tuple[float, ...]:
    return tuple(float(v) for v in row)


@dataclass(frozen=True)
class ParamLayout:
    """Names and widths of the per-splat slots of a :class:`ParamVector`."""

    fields: tuple[tuple[str, int], ...] = (
        ("mu", 3),
        ("q", 4),
        ("log_s", 3),
        ("logit_opacity", 1),
        ("color", 3),
    )

    @property
    def width(self) -> int:
        """Scalars per splat."""
        return sum(width for _, width in self.fields)

    def slot(self, name: str) -> slice:
        """Column range of ``name`` inside one splat's block."""
        start = 0
        for field_name, width in self.fields:
            if field_name == name:
                return slice(start, start + width)
            start += width
        msg = f"Unknown parameter slot {name!r}."
        raise LayoutError(msg)


LAYOUT = ParamLayout()


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat optimisable parameters of a scene.

    ``template`` supplies everything that is not optimised (labels, binding
    triangles and barycentrics, flags) when unpacking. Bound, non-decoupled splats
    store their binding-local offset, rotation and log scale in the ``mu``, ``q``
    and ``log_s`` slots.
    """

    values: FloatArray
    template: Scene
    layout: ParamLayout = field(default=LAYOUT)

    def __post_init__(self) -> None:  # noqa: D105
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.shape[0] != self.layout.width * len(self.template):
            msg = (
                f"Parameter vector of length {values.shape[0]} does not match "
                f"{len(self.template)} splats x {self.layout.width} slots."
            )
            raise LayoutError(msg)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:  # noqa: D105
        return int(self.values.shape[0])

    def blocks(self) -> FloatArray:
        """View of the values as ``(n_splats, width)``."""
        return self.values.reshape(len(self.template), self.layout.width)

    def field(self, name: str) -> FloatArray:
        """Copy of one slot for every splat, shape ``(n, width)``."""
        return self.blocks()[:, self.layout.slot(name)].copy()

    def with_values(self, values: ArrayLike) -> ParamVector:
        """Same layout and template, new values."""
        return ParamVector(np.asarray(values, dtype=np.float64), self.template, self.layout)

    @classmethod
    def from_fields(cls, template: Scene, **slots: FloatArray) -> ParamVector:
        """Assemble a vector from per-slot ``(n, width)`` arrays."""
        n = len(template)
        blocks = np.zeros((n, LAYOUT.width))
        for name, values in slots.items():
            blocks[:, LAYOUT.slot(name)] = np.asarray(values, dtype=np.float64).reshape(n, -1)
        return cls(blocks.reshape(-1), template)


class Unpacked(NamedTuple):
    """Result of :func:`unpack_params`."""

    scene: Scene
    clamped: bool


def pack_params(scene: Scene | Sequence[GaussianSplat]) -> ParamVector:
    """Flatten the optimisable parameters of ``scene``."""
    if not isinstance(scene, Scene):
        scene = Scene.from_splats(scene)
    posable = scene.posable[:, None]
    mu = np.where(posable, scene.offset, scene.mu)
    q = np.where(posable, scene.local_rotation, scene.q)
    log_s = np.log(np.where(posable, scene.local_scale, scene.s))
    opacity = np.clip(scene.opacity, OPACITY_EPS, 1.0 - OPACITY_EPS)
    return ParamVector.from_fields(
        scene,
        mu=mu,
        q=q,
        log_s=log_s,
        logit_opacity=logit(opacity)[:, None],
        color=scene.color,
    )


def unpack_params(vector: ParamVector) -> Unpacked:
    """Rebuild a scene from ``vector``, normalising quaternions and clamping color.

    Coordinates equal to those packed from the template return the template's
    own values bit for bit, so opacity 0 or 1 survives the logit clip.
    ``clamped`` reports whether any color left [0, 1]. World columns of posable
    splats keep the template's values until the scene is posed again.
    """
    template = vector.template
    posable = template.posable[:, None]
    blocks = vector.blocks()
    reference = pack_params(template).blocks()
    unchanged = blocks == reference

    mu = vector.field("mu")
    q_slot, s_slot, o_slot = LAYOUT.slot("q"), LAYOUT.slot("log_s"), LAYOUT.slot("logit_opacity")
    q = quaternion.normalize(vector.field("q")) if len(template) else np.zeros((0, 4))
    q = np.where(unchanged[:, q_slot].all(axis=1, keepdims=True), np.where(posable, template.local_rotation, template.q), q)
    scale = np.where(unchanged[:, s_slot], np.where(posable, template.local_scale, template.s), np.exp(vector.field("log_s")))
    opacity = np.clip(expit(vector.field("logit_opacity")[:, 0]), 0.0, 1.0)
    opacity = np.where(unchanged[:, o_slot][:, 0], template.opacity, opacity)
    raw_color = vector.field("color")
    color = np.clip(raw_color, 0.0, 1.0)
    clamped = bool(np.any(color != raw_color))
    scene = template.replace(
        mu=np.where(posable, template.mu, mu),
        q=np.where(posable, template.q, q),
        s=np.where(posable, template.s, scale),
        offset=np.where(posable, mu, template.offset),
        local_rotation=np.where(posable, q, template.local_rotation),
        local_scale=np.where(posable, scale, template.local_scale),
        opacity=opacity,
        color=color,
    )
    return Unpacked(scene, clamped)


__all__ = [
    "LAYOUT",
    "Covariance3",
    "GaussianSplat",
    "MeshBinding",
    "ParamLayout",
    "ParamVector",
    "Scene",
    "Unpacked",
    "covariance_from_params",
    "covariance_matrices",
    "gaussian_eval",
    "pack_params",
    "unpack_params",
]
