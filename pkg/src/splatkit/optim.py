"""Adam with an exponential learning-rate schedule.

Coordinates whose gradient is exactly zero in a step keep their value and
moments, so splats outside every sampled view do not drift on stale momentum.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .exceptions import LayoutError
from .splat import LAYOUT, ParamLayout, ParamVector

if TYPE_CHECKING:
    from collections.abc import Mapping

    from numpy.typing import ArrayLike, NDArray

    FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class Schedule:
    """``lr(i) = start * (end / start) ** (i / iterations)``, held at ``end`` afterwards."""

    start: float = 1e-3
    end: float = 1e-5
    iterations: int = 5000

    def __call__(self, step: int) -> float:  # noqa: D102
        if self.iterations <= 0:
            return self.start
        progress = min(max(step, 0), self.iterations) / self.iterations
        return float(self.start * (self.end / self.start) ** progress)


@dataclass(frozen=True, eq=False)
class AdamState:
    """Moments, step count and hyper-parameters of one optimiser."""

    m: FloatArray
    v: FloatArray
    step: int = 0
    schedule: Schedule = field(default_factory=Schedule)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_scale: FloatArray | None = None

    def __post_init__(self) -> None:  # noqa: D105
        if self.m.shape != self.v.shape:
            msg = f"Moment shapes differ: {self.m.shape} vs {self.v.shape}."
            raise LayoutError(msg)
        if self.lr_scale is not None and self.lr_scale.shape != self.m.shape:
            msg = "Learning-rate scale does not match the moments."
            raise LayoutError(msg)

    def __len__(self) -> int:  # noqa: D105
        return int(self.m.shape[0])

    @classmethod
    def zeros(cls, length: int, schedule: Schedule | None = None, lr_scale: FloatArray | None = None) -> AdamState:
        """Fresh state for ``length`` parameters."""
        return cls(np.zeros(length), np.zeros(length), 0, schedule or Schedule(), lr_scale=lr_scale)

    @property
    def lr(self) -> float:
        """Learning rate of the next step."""
        return self.schedule(self.step)

    def remap(self, source: ArrayLike, children: ArrayLike, width: int = LAYOUT.width) -> AdamState:
        """Carry moments over a densification: survivors keep theirs, children start at zero."""
        source = np.asarray(source, dtype=np.int64)
        children = np.asarray(children, dtype=np.bool_)
        m = self.m.reshape(-1, width)[source].copy()
        v = self.v.reshape(-1, width)[source].copy()
        m[children] = 0.0
        v[children] = 0.0
        scale = None if self.lr_scale is None else self.lr_scale.reshape(-1, width)[source].reshape(-1)
        return replace(self, m=m.reshape(-1), v=v.reshape(-1), lr_scale=scale)


def field_scales(count: int, scales: Mapping[str, float], layout: ParamLayout = LAYOUT) -> FloatArray:
    """Per-coordinate learning-rate multipliers from per-slot values (missing slots get 1)."""
    row = np.ones(layout.width)
    for name, value in scales.items():
        row[layout.slot(name)] = value
    return np.tile(row, count)


def adam_step(
    params: ParamVector | FloatArray, grads: ArrayLike, state: AdamState,
) -> tuple[ParamVector | FloatArray, AdamState]:
    """One bias-corrected Adam update at the scheduled learning rate.

    The update is lazy: coordinates whose gradient is exactly zero keep their
    value and both moments. Bias correction still uses the global step count,
    so a coordinate first touched late takes a shorter first step than plain Adam.
    """
    values = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64).reshape(-1)
    if values.shape != g.shape or len(state) != values.shape[0]:
        msg = f"Parameters ({values.shape[0]}), gradients ({g.shape[0]}) and state ({len(state)}) differ in length."
        raise LayoutError(msg)
    step = state.step + 1
    lr = state.schedule(state.step)
    active = g != 0.0
    m = np.where(active, state.beta1 * state.m + (1.0 - state.beta1) * g, state.m)
    v = np.where(active, state.beta2 * state.v + (1.0 - state.beta2) * g * g, state.v)
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    update = lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if state.lr_scale is not None:
        update = update * state.lr_scale
    new_values = np.where(active, values - update, values)
    new_state = replace(state, m=m, v=v, step=step)
    if isinstance(params, ParamVector):
        return params.with_values(new_values), new_state
    return new_values, new_state


__all__ = ["AdamState", "Schedule", "adam_step", "field_scales"]
