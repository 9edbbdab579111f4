"""Analytic reverse pass against central differences."""
from __future__ import annotations

import numpy as np
import pytest

from splatkit.exceptions import NonFiniteError
from splatkit.gradcheck import (
    GradcheckOptions,
    GradcheckReport,
    finite_difference,
    gradcheck_case,
    gradcheck_config,
    relative_error,
    run_gradcheck,
)
from splatkit.gradients import EDIT_LAMBDA_RGB, ObjectiveConfig, Stage, backward, check_finite, evaluate
from splatkit.losses import LossWeights
from splatkit.splat import LAYOUT


def test_relative_error_floor() -> None:
    err = relative_error(np.array([1.0, 0.0, 2e-9]), np.array([1.1, 0.0, 1e-9]), floor=1e-8)
    np.testing.assert_allclose(err, [0.1 / 1.1, 0.0, 0.1])


def test_default_options_match_the_acceptance_bound() -> None:
    options = GradcheckOptions()
    assert (options.configs, options.splats, options.size) == (100, 20, 16)
    assert options.step == 1e-4
    assert options.tolerance == 1e-3


def test_modeling_gradient_matches_finite_differences() -> None:
    report = run_gradcheck(GradcheckOptions(configs=2, splats=5, size=8))
    assert report.configs == 2
    assert report.coordinates == 2 * 5 * LAYOUT.width
    assert report.passed, report.rows()
    assert set(report.per_class) == {"position", "rotation", "scale", "opacity", "color"}


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_every_parameter_class_within_tolerance(seed: int) -> None:
    report = run_gradcheck(GradcheckOptions(configs=1, splats=8, size=12, seed=seed))
    for name, error in report.per_class.items():
        assert error < 1e-3, f"{name}: {error:.3e}"


@pytest.mark.slow
def test_default_gradient_check_passes() -> None:
    report = run_gradcheck()
    assert report.configs == 100
    assert report.coordinates == 100 * 20 * LAYOUT.width
    assert report.passed, report.rows()


def test_editing_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(11)
    vector, views = gradcheck_case(rng, splats=3, size=8)
    reference = vector.with_values(vector.values + rng.normal(scale=0.05, size=len(vector)))
    config = ObjectiveConfig(stage=Stage.EDITING, reference=reference, free=np.array([0]), sigma_cutoff=None)
    analytic = evaluate(vector, views, config).gradient
    numeric = finite_difference(vector, views, config, 1e-4)
    assert relative_error(analytic, numeric).max() < 1e-3


def test_objective_terms() -> None:
    vector, views = gradcheck_case(np.random.default_rng(2), splats=4, size=8)
    modeling = evaluate(vector, views, gradcheck_config(), gradient=False)
    assert set(modeling.terms) == {"rgb", "label_ce", "tracking"}
    assert len(modeling.renders) == 1
    assert modeling.screen_grad == []

    editing = ObjectiveConfig(stage=Stage.EDITING, weights=LossWeights(edit=(1.0, 1.0, 0.0)))
    assert editing.lambda_rgb == EDIT_LAMBDA_RGB
    result = evaluate(vector, views, editing)
    # Without a reference the scene anchors to itself.
    assert result.terms["anchor"] == 0.0
    assert result.loss == pytest.approx(0.5 * result.terms["rgb"])
    assert result.screen_grad[0].shape == (4,)


def test_backward_returns_parameter_layout() -> None:
    vector, views = gradcheck_case(np.random.default_rng(3), splats=4, size=8)
    grad = backward(vector, views, gradcheck_config())
    assert len(grad) == len(vector)
    assert grad.template is vector.template
    assert np.all(np.isfinite(grad.values))


def test_check_finite_names_the_splat() -> None:
    grad = np.zeros(3 * LAYOUT.width)
    check_finite(1.0, grad, LAYOUT.width)
    grad[LAYOUT.width + 2] = np.nan
    with pytest.raises(NonFiniteError) as info:
        check_finite(1.0, grad, LAYOUT.width)
    assert info.value.splat_index == 1
    with pytest.raises(NonFiniteError) as info:
        check_finite(float("inf"), np.zeros(LAYOUT.width), LAYOUT.width)
    assert info.value.splat_index is None


def test_empty_report_passes() -> None:
    report = GradcheckReport()
    assert report.max_error == 0.0
    assert report.passed
    assert report.rows()[-1] == ("all", 0.0)
