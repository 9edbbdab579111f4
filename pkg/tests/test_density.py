"""Clone, split and prune."""
from __future__ import annotations

import numpy as np
import pytest

from splatkit import quaternion
from splatkit.density import DensifyOptions, DensifyStats, densify_and_prune
from splatkit.rig import bind_splats, pose_splats
from splatkit.splat import Scene
from splatkit.synthetic import icosphere


def _scene(opacity: list[float], size: list[float]) -> Scene:
    n = len(opacity)
    return Scene.from_arrays(
        mu=np.column_stack([np.linspace(-1, 1, n), np.zeros(n), np.zeros(n)]),
        q=np.tile(quaternion.IDENTITY, (n, 1)),
        s=np.repeat(np.asarray(size)[:, None], 3, axis=1),
        opacity=opacity,
        color=np.full((n, 3), 0.5),
        label=np.arange(n),
    )


def _stats(grads: list[float]) -> DensifyStats:
    stats = DensifyStats.zeros(len(grads))
    stats.update(np.asarray(grads), np.ones(len(grads)))
    return stats


def test_stats_ignore_invisible_splats() -> None:
    stats = DensifyStats.zeros(3)
    stats.update([1.0, 2.0, 3.0], [1.0, 0.0, 2.0])
    stats.update([3.0, 2.0, 1.0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(stats.mean_grad(), [2.0, 0.0, 3.0])
    np.testing.assert_allclose(stats.denom, [2.0, 0.0, 1.0])
    assert stats.iteration == 2


def test_prune_clone_and_split() -> None:
    options = DensifyOptions(grad_threshold=0.1, opacity_threshold=0.05, percent_dense=0.1, max_splats=100)
    # 0: pruned, 1: small + high grad -> clone, 2: large + high grad -> split, 3: untouched.
    scene = _scene([0.01, 0.5, 0.5, 0.5], [0.05, 0.05, 0.5, 0.05])
    result = densify_and_prune(scene, _stats([1.0, 1.0, 1.0, 0.0]), options, extent=1.0, rng=np.random.default_rng(0))
    assert result.source.tolist() == [1, 3, 1, 2, 2]
    assert result.children.tolist() == [False, False, True, True, True]
    assert len(result.scene) == 5
    np.testing.assert_allclose(result.scene.mu[2], scene.mu[1])
    np.testing.assert_allclose(result.scene.s[3], scene.s[2] / options.split_factor)
    assert len(result.stats) == 5
    assert result.stats.iteration == 0


def test_cap_keeps_most_opaque_survivors() -> None:
    options = DensifyOptions(grad_threshold=0.1, opacity_threshold=0.0, max_splats=2)
    scene = _scene([0.2, 0.9, 0.5, 0.8], [0.01] * 4)
    result = densify_and_prune(scene, _stats([1.0] * 4), options, extent=1.0, rng=np.random.default_rng(0))
    assert sorted(result.source.tolist()) == [1, 3]
    assert not result.children.any()


def test_cap_serves_highest_gradients_first() -> None:
    options = DensifyOptions(grad_threshold=0.1, opacity_threshold=0.0, percent_dense=1.0, max_splats=4)
    scene = _scene([0.5, 0.5, 0.5], [0.01] * 3)
    result = densify_and_prune(scene, _stats([0.2, 0.9, 0.5]), options, extent=1.0, rng=np.random.default_rng(0))
    assert len(result.scene) <= options.max_splats
    assert result.source.tolist() == [0, 1, 2, 1]


@pytest.mark.parametrize("children", [2, 3])
def test_split_children_of_bound_splats_stay_posable(children: int) -> None:
    mesh = icosphere(1)
    rng = np.random.default_rng(0)
    points = mesh.vertices[:3] * 1.01
    scene = Scene.from_arrays(
        mu=points,
        q=np.tile(quaternion.IDENTITY, (3, 1)),
        s=np.full((3, 3), 0.3),
        opacity=np.full(3, 0.7),
        color=np.full((3, 3), 0.5),
    )
    bound = bind_splats(scene, mesh)
    options = DensifyOptions(grad_threshold=0.1, percent_dense=0.01, split_children=children)
    result = densify_and_prune(bound, _stats([1.0, 0.0, 0.0]), options, extent=1.0, rng=rng)
    assert len(result.scene) == 2 + children
    kids = result.scene.take(np.flatnonzero(result.children))
    assert kids.posable.all()
    np.testing.assert_array_equal(kids.rest_offset, kids.offset)
    # Children posed on their own mesh land where the split placed them.
    np.testing.assert_allclose(pose_splats(kids, mesh).mu, kids.mu, atol=1e-9)
