"""Quaternion algebra in (w, x, y, z) order with the Hamilton product.

All functions are vectorised over leading axes: ``q`` has shape ``(..., 4)`` and
rotation matrices ``(..., 3, 3)``.
"""
from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    FloatArray = NDArray[np.float64]

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q: ArrayLike) -> FloatArray:
    """Return ``q / |q|``."""
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def conjugate(q: ArrayLike) -> FloatArray:
    """Return the conjugate (the inverse for unit quaternions)."""
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def multiply(a: ArrayLike, b: ArrayLike) -> FloatArray:
    """Hamilton product ``a ⊗ b``; the rotation ``b`` is applied first."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def left_matrix(a: ArrayLike) -> FloatArray:
    """Matrix ``L(a)`` with ``a ⊗ b = L(a) @ b``."""
    a = np.asarray(a, dtype=np.float64)
    w, x, y, z = np.moveaxis(a, -1, 0)
    rows = [
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def to_matrix(q: ArrayLike) -> FloatArray:
    """Rotation matrix of the unit quaternion ``q``."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(row, axis=-1) for row in rows], axis=-2)


def matrix_gradient(q: ArrayLike, grad_r: ArrayLike) -> FloatArray:
    """Pull ``dL/dR`` (shape ``(..., 3, 3)``) back to ``dL/dq`` through :func:`to_matrix`.

    ``q`` is taken as given; compose with :func:`normalize_gradient` when the
    matrix was built from a normalised quaternion.
    """
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(grad_r, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
    g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
    g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]
    dw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    dx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
    dy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
    dz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
    return np.stack([dw, dx, dy, dz], axis=-1)


def normalize_gradient(q: ArrayLike, grad_unit: ArrayLike) -> FloatArray:
    """Pull a gradient with respect to ``q/|q|`` back to the raw ``q``."""
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(grad_unit, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    unit = q / norm
    return (g - unit * np.sum(unit * g, axis=-1, keepdims=True)) / norm


def from_matrix(r: ArrayLike) -> FloatArray:
    """Unit quaternion with non-negative ``w`` for the rotation matrix ``r``."""
    r = np.asarray(r, dtype=np.float64)
    m00, m11, m22 = r[..., 0, 0], r[..., 1, 1], r[..., 2, 2]
    trace = m00 + m11 + m22
    candidates = np.stack(
        [
            np.stack([1 + trace, r[..., 2, 1] - r[..., 1, 2], r[..., 0, 2] - r[..., 2, 0], r[..., 1, 0] - r[..., 0, 1]], -1),
            np.stack(
                [
                    r[..., 2, 1] - r[..., 1, 2], 1 + m00 - m11 - m22, r[..., 0, 1] + r[..., 1, 0], r[..., 0, 2] + r[..., 2, 0],
                ],
                -1,
            ),
            np.stack(
                [
                    r[..., 0, 2] - r[..., 2, 0], r[..., 0, 1] + r[..., 1, 0], 1 - m00 + m11 - m22, r[..., 1, 2] + r[..., 2, 1],
                ],
                -1,
            ),
            np.stack(
                [
                    r[..., 1, 0] - r[..., 0, 1], r[..., 0, 2] + r[..., 2, 0], r[..., 1, 2] + r[..., 2, 1], 1 - m00 - m11 + m22,
                ],
                -1,
            ),
        ],
        axis=-2,
    )
    # Shepperd: use the row built around the largest diagonal term.
    pivot = np.argmax(np.stack([trace, m00, m11, m22], axis=-1), axis=-1)
    chosen = np.take_along_axis(candidates, pivot[..., None, None], axis=-2)[..., 0, :]
    q = normalize(chosen)
    return np.where(q[..., :1] < 0, -q, q)


def about_axis(axis: ArrayLike, angle: float) -> FloatArray:
    """Quaternion rotating by ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def random_unit(rng: np.random.Generator, size: int | tuple[int, ...] | None = None) -> FloatArray:
    """Uniformly distributed unit quaternions."""
    shape = (4,) if size is None else (*np.atleast_1d(size), 4)
    return normalize(rng.standard_normal(shape))
