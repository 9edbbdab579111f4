"""Run sections and the option objects built from them."""
from __future__ import annotations

from configparser import ConfigParser
from typing import TYPE_CHECKING

import pytest
from pydantic import BaseModel

from splatkit import settings
from splatkit.density import DensifyOptions
from splatkit.editing import SUBJECT_LEFT
from splatkit.exceptions import InvalidConverterError
from splatkit.ext.pydantic import apply_model
from splatkit.gradcheck import GradcheckOptions
from splatkit.losses import LossWeights
from splatkit.synthetic import SyntheticConfig
from splatkit.training import EditOptions, FitOptions

if TYPE_CHECKING:
    from pathlib import Path


def test_defaults_match_the_option_objects() -> None:
    assert settings.fit_options() == FitOptions(iterations=5000)
    assert settings.densify_options() == DensifyOptions()
    assert settings.synthetic_config() == SyntheticConfig()
    assert settings.gradcheck_options() == GradcheckOptions()
    assert settings.loss_weights() == LossWeights()


def test_edit_options_carry_the_edit_blend() -> None:
    settings.Editing.weights = (0.5, 2.0, 0.25)
    options = settings.edit_options()
    assert isinstance(options, EditOptions)
    assert options.weights.edit == (0.5, 2.0, 0.25)
    assert settings.loss_weights().edit == LossWeights().edit
    pipeline = settings.pipeline_options()
    assert pipeline.subject_left == SUBJECT_LEFT
    assert pipeline.editing == options


def test_assignments_flow_into_options() -> None:
    settings.Modeling.iterations = 0
    settings.Modeling.holdout = (1, 3)
    settings.Density.max_splats = 40
    settings.Modeling.lambda_rec = 0.25
    options = settings.fit_options()
    assert options.iterations == 0
    assert options.holdout == (1, 3)
    assert options.density.max_splats == 40
    assert options.weights.lambda_rec == 0.25


@pytest.mark.parametrize(
    ("section", "name", "value"),
    [
        (settings.Modeling, "lambda_rgb", 1.5),
        (settings.Modeling, "iterations", -1),
        (settings.Density, "grad_threshold", 0.0),
        (settings.Editing, "patch", 1),
        (settings.Synthetic, "width", 4),
    ],
)
def test_out_of_range_values(section: type, name: str, value: object) -> None:
    with pytest.raises(InvalidConverterError):
        setattr(section, name, value)


def test_reset_restores_defaults() -> None:
    settings.Modeling.iterations = 12
    settings.RunSetting.reset()
    assert settings.Modeling.iterations == 5000


def test_settings_file_overrides_defaults(tmp_path: Path) -> None:
    file = tmp_path / "run.ini"
    file.write_text("[Modeling]\niterations = 25\n\n[Editing]\nweights = 1.0,0.5,0.0\n", encoding="utf-8")
    settings.RunSetting.set_file(file)
    assert settings.Modeling.iterations == 25
    assert settings.Editing.weights == (1.0, 0.5, 0.0)
    assert settings.Modeling.lambda_rgb == 0.9
    assert file.read_text(encoding="utf-8").count("\n") == 5


def test_dump_writes_every_section(tmp_path: Path) -> None:
    settings.Synthetic.cameras = 3
    out = tmp_path / "resolved.ini"
    settings.RunSetting.dump(out)
    stored = ConfigParser(interpolation=None)
    stored.read(out, encoding="utf-8")
    assert {"Modeling", "Density", "Editing", "Synthetic", "Gradcheck"} <= set(stored.sections())
    assert stored.get("Synthetic", "cameras") == "3"
    assert stored.get("Editing", "weights") == "1.0,1.0,0.1"
    assert not stored.has_section("Services")


def test_services_read_the_environment(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("EDITOR_URL", raising=False)
    monkeypatch.delenv("SERVICE_TOKEN", raising=False)
    monkeypatch.setenv("REFINER_URL", "http://refiner.local")
    assert settings.Services.editor_url == ""
    assert settings.Services.refiner_url == "http://refiner.local"
    dotenv = tmp_path / ".env"
    dotenv.write_text("SERVICE_TOKEN=secret\nREFINER_URL=http://ignored\n", encoding="utf-8")
    settings.ServiceSetting.load_dotenv(dotenv)
    settings.Services.editor_url = "http://editor.local"
    options = settings.service_options(tmp_path / "cache")
    assert options.editor_url == "http://editor.local"
    assert options.refiner_url == "http://refiner.local"
    assert options.token == "secret"
    assert options.cache_dir == tmp_path / "cache"


class _Flags(BaseModel):
    iterations: int | None = None
    seed: int | None = None
    unknown: int | None = 4


def test_apply_model_skips_unset_fields() -> None:
    applied = apply_model(settings.Modeling, _Flags(iterations=7))
    assert applied == ["iterations"]
    assert settings.Modeling.iterations == 7
    assert settings.Modeling.seed == 0
    assert not hasattr(settings.Modeling, "unknown")
