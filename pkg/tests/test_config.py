"""Setting descriptors, data types and the parser backends."""
from __future__ import annotations

from configparser import ConfigParser
from pathlib import Path
from typing import TYPE_CHECKING, ClassVar

import pytest
from hypothesis import given
from hypothesis import strategies as st

from splatkit.config import SectionMeta, Setting
from splatkit.data_types import (
    BaseDataType,
    Float,
    Integer,
    PositiveFloat,
    PositiveInt,
    String,
    Tuple,
    UnitInterval,
)
from splatkit.exceptions import InvalidConverterError, InvalidDefaultError, SettingsPathConflictError
from splatkit.ext.parsers import MsgspecParser
from splatkit.parsers import EnvParser, IniParser
from splatkit.sentinels import UNSET

if TYPE_CHECKING:
    from collections.abc import Iterator


class ScratchSetting(Setting):
    """Family used only by these tests."""

    write_on_edit: ClassVar[bool] = True


class Scratch(metaclass=SectionMeta):  # noqa: D101
    count = ScratchSetting(PositiveInt(3))
    ratio = ScratchSetting(UnitInterval(0.5))
    name = ScratchSetting("hair")
    scale = ScratchSetting(2.5)
    pair = ScratchSetting(Tuple((1.0, 2.0)))


@pytest.fixture(autouse=True)
def _reset_scratch() -> Iterator[None]:
    yield
    ScratchSetting.reset()


# Descriptors


def test_defaults_and_assignment() -> None:
    assert Scratch.count == 3
    assert Scratch.name == "hair"
    assert Scratch.scale == 2.5
    Scratch.count = 11
    Scratch.name = "neck"
    Scratch.pair = (0.5, 0.25)
    assert Scratch.count == 11
    assert Scratch.name == "neck"
    assert Scratch.pair == (0.5, 0.25)


def test_invalid_values_are_rejected() -> None:
    with pytest.raises(InvalidConverterError, match=r"Scratch\.count"):
        Scratch.count = 0
    with pytest.raises(InvalidConverterError):
        Scratch.ratio = 1.5
    with pytest.raises(InvalidConverterError, match="expects <int>"):
        Scratch.count = "many"
    assert Scratch.count == 3


def test_none_is_not_a_value() -> None:
    with pytest.raises(InvalidConverterError, match="expects <str>"):
        Scratch.name = None
    assert Scratch.name == "hair"


def test_members_and_resolved_snapshot() -> None:
    keys = [member.key for member in ScratchSetting.members()]
    assert keys[:2] == ["Scratch.count", "Scratch.ratio"]
    assert ScratchSetting.resolved()["Scratch.ratio"] == 0.5


def test_missing_defaults() -> None:
    with pytest.raises(InvalidDefaultError):
        ScratchSetting()
    with pytest.raises(InvalidDefaultError):
        ScratchSetting(None)
    with pytest.raises(InvalidDefaultError):
        BaseDataType.cast([1, 2])
    with pytest.raises(InvalidDefaultError, match="bool"):
        ScratchSetting(True)  # noqa: FBT003


def test_bound_ini_file_is_read_and_rewritten(tmp_path: Path) -> None:
    file = tmp_path / "scratch.ini"
    file.write_text("[Scratch]\ncount = 7\n", encoding="utf-8")
    Scratch.ratio = 0.25
    ScratchSetting.set_file(file)
    assert Scratch.count == 7
    assert Scratch.ratio == 0.25
    Scratch.count = 9
    stored = ConfigParser(interpolation=None)
    stored.read(file, encoding="utf-8")
    assert stored.get("Scratch", "count") == "9"
    assert stored.get("Scratch", "ratio") == "0.25"
    assert stored.get("Scratch", "pair") == "1.0,2.0"
    assert stored.get("Scratch", "name") == "hair"


def test_dump_and_rebind_json(tmp_path: Path) -> None:
    Scratch.count = 5
    Scratch.name = "hairline"
    Scratch.scale = 0.75
    file = tmp_path / "scratch.json"
    ScratchSetting.dump(file)
    ScratchSetting.reset()
    assert Scratch.count == 3
    ScratchSetting.set_file(file)
    assert Scratch.count == 5
    assert Scratch.name == "hairline"
    assert Scratch.scale == 0.75
    assert Scratch.pair == (1.0, 2.0)


def test_file_binding_errors(tmp_path: Path) -> None:
    with pytest.raises(ValueError, match="No file bound"):
        ScratchSetting.write()
    with pytest.raises(ValueError, match="Unsupported"):
        ScratchSetting.set_file(tmp_path / "scratch.xml")
    with pytest.raises(TypeError):
        Setting.set_file(tmp_path / "scratch.ini")


def test_plain_class_attributes_still_assign() -> None:
    Scratch.extra = 1
    assert Scratch.extra == 1
    del Scratch.extra


# Data types


@given(st.integers(min_value=-(10**9), max_value=10**9))
def test_integer_text_round_trip(value: int) -> None:
    data_type = Integer(value)
    assert data_type.convert(str(data_type)) == value


@pytest.mark.parametrize(("default", "expected"), [(3, Integer), (0.5, Float), ("face", String), ((1.0, 2.0), Tuple)])
def test_cast_picks_data_type(default: object, expected: type) -> None:
    data_type = BaseDataType.cast(default)
    assert isinstance(data_type, expected)
    assert data_type.convert(str(data_type)) == default


def test_range_checked_types() -> None:
    for data_type in (UnitInterval(-0.1), PositiveFloat(0.0), PositiveInt(1, minimum=2)):
        with pytest.raises(InvalidConverterError):
            data_type.validate()
    assert UnitInterval(1.0).validate()
    assert PositiveInt(0, minimum=0).validate()
    assert Float(2).value == 2.0


def test_tuple_conversion() -> None:
    weights = Tuple((1.0, 1.0, 0.1))
    assert str(weights) == "1.0,1.0,0.1"
    assert weights.convert("0.5, 2, 3") == (0.5, 2.0, 3.0)
    assert Tuple((), data_type=Integer(0)).convert(" ") == ()
    with pytest.raises(InvalidDefaultError):
        Tuple(())


# Parsers


def test_env_parser_precedence(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    dotenv = tmp_path / ".env"
    dotenv.write_text('# comment\nexport EDITOR_URL="http://dotenv"\nREFINER_URL=http://refiner\nbroken\n', encoding="utf-8")
    monkeypatch.delenv("EDITOR_URL", raising=False)
    monkeypatch.delenv("REFINER_URL", raising=False)
    monkeypatch.delenv("SERVICE_TOKEN", raising=False)
    parser = EnvParser()
    parser.read(dotenv)
    assert parser.get("any", "editor_url") == "http://dotenv"
    monkeypatch.setenv("EDITOR_URL", "http://env")
    assert parser.get("any", "editor_url") == "http://env"
    parser.set("any", "editor_url", "http://flag")
    assert parser.get("any", "editor_url") == "http://flag"
    assert parser.has_option("other", "refiner_url")
    assert parser.get("any", "service_token", fallback="none") == "none"
    with pytest.raises(NotImplementedError):
        parser.write(None)


def test_ini_parser_keeps_option_case(tmp_path: Path) -> None:
    parser = IniParser()
    parser.set("Modeling", "lambdaRGB", 0.9)
    assert parser.has_option("Modeling", "lambdaRGB")
    file = tmp_path / "case.ini"
    with file.open("w", encoding="utf-8") as fh:
        parser.write(fh)
    assert "lambdaRGB = 0.9" in file.read_text(encoding="utf-8")


def test_msgspec_parser_nested_sections() -> None:
    parser = MsgspecParser()
    parser.set("Editing.Anchor", "position", 1.0)
    parser.set("Editing", "flag", True)  # noqa: FBT003
    parser.set("Editing", "weights", [1.0, 0.5])
    assert parser.data == {"Editing": {"Anchor": {"position": 1.0}, "flag": True, "weights": [1.0, 0.5]}}
    assert parser.get("Editing", "flag") == "true"
    assert parser.get("Editing", "weights") == "1.0,0.5"
    assert parser.has_section("Editing.Anchor")
    assert not parser.has_option("Missing", "x")
    with pytest.raises(SettingsPathConflictError):
        parser.set("Editing.flag", "x", 1)


def test_unset_sentinel() -> None:
    assert not UNSET
    assert UNSET != UNSET  # noqa: PLR0124
    assert repr(UNSET) == "UNSET"
