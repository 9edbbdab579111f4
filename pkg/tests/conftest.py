"""Shared fixtures for splatkit tests."""
from __future__ import annotations

from typing import TYPE_CHECKING

import hypothesis
import numpy as np
import pytest
from loguru import logger

from splatkit import settings
from splatkit.camera import Camera
from splatkit.rig import MeshFrame
from splatkit.splat import Scene
from splatkit.synthetic import SyntheticConfig, generate_synthetic_scene

if TYPE_CHECKING:
    from collections.abc import Iterator

    from splatkit.synthetic import SyntheticScene

TINY = SyntheticConfig(cameras=3, frames=2, width=24, height=24, splats=60, subdivisions=1)


def pytest_configure() -> None:
    """Property tests run numpy-heavy examples; no per-example deadline."""
    hypothesis.settings.register_profile("splatkit", deadline=None, max_examples=50)
    hypothesis.settings.load_profile("splatkit")


@pytest.fixture(autouse=True)
def _reset_settings() -> Iterator[None]:
    """Every test starts from the declared defaults."""
    yield
    settings.RunSetting.reset()
    settings.ServiceSetting.reset()


@pytest.fixture
def caplog(caplog: pytest.LogCaptureFixture) -> Iterator[pytest.LogCaptureFixture]:
    """Route loguru records into pytest's ``caplog``."""
    logger.enable("splatkit")
    handler_id = logger.add(caplog.handler, format="{message}", level=0)
    yield caplog
    logger.remove(handler_id)
    logger.disable("splatkit")


@pytest.fixture(scope="session")
def tiny_capture() -> SyntheticScene:
    """Small synthetic capture shared by the slower tests; treat as read-only."""
    return generate_synthetic_scene(0, TINY)


@pytest.fixture
def front_camera() -> Camera:
    """32x32 camera on the +z axis looking at the origin."""
    return Camera.look_at((0.0, 0.0, 4.0), (0.0, 0.0, 0.0), width=32, height=32)


@pytest.fixture
def triangle_mesh() -> MeshFrame:
    """Two triangles forming a unit square in the z=0 plane."""
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    return MeshFrame(vertices, np.array([[0, 1, 2], [0, 2, 3]]))


def random_scene(rng: np.random.Generator, count: int, *, spread: float = 0.6, label: int = 0) -> Scene:
    """Free splats scattered around the origin."""
    q = rng.normal(size=(count, 4))
    return Scene.from_arrays(
        mu=rng.uniform(-spread, spread, size=(count, 3)),
        q=q / np.linalg.norm(q, axis=1, keepdims=True),
        s=rng.uniform(0.05, 0.2, size=(count, 3)),
        opacity=rng.uniform(0.2, 0.9, size=count),
        color=rng.uniform(0.05, 0.95, size=(count, 3)),
        label=np.full(count, label),
    )
