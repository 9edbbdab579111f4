"""Descriptor based settings.

A :class:`Setting` declared on a class reads and writes one option of a
parser-backed store. The section is the class' qualified name, the option is the
attribute name. Until :meth:`Setting.set_file` binds a file, values live in an
in-memory INI store, so sections are usable at import time and in tests without
touching disk.

    class Modeling(metaclass=SectionMeta):
        iterations = RunSetting(PositiveInt(5000))

    Modeling.iterations = 200        # validated, stored as text
    RunSetting.dump(out / "resolved.ini")
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Any, ClassVar, Generic, TypeVar

from loguru import logger

from .data_types import BaseDataType
from .exceptions import InvalidConverterError, InvalidDefaultError
from .parsers import EnvParser, IniParser
from .sentinels import UNSET

if TYPE_CHECKING:
    from pathlib import Path

    from .parsers import SettingsParser

VT = TypeVar("VT")


class SectionMeta(type):
    """Route class attribute assignment through :meth:`Setting.__set__`."""

    def __setattr__(cls, key: str, value: object) -> None:
        """Assign through the descriptor when ``key`` names a setting."""
        attr = cls.__dict__.get(key)
        if isinstance(attr, Setting):
            attr.__set__(cls, value)
        else:
            super().__setattr__(key, value)


class Setting(Generic[VT]):
    """A typed option stored in the parser shared by one descriptor family.

    Subclass ``Setting`` to create a family: every family has its own parser,
    bound file and member list, so run options and environment-backed service
    options never share storage.
    """

    validate_types: ClassVar[bool] = True
    """Require stored values to convert back to the type of the default."""
    write_on_edit: ClassVar[bool] = True
    """Rewrite the bound file after every assignment."""
    persist_defaults: ClassVar[bool] = True
    """Store defaults in the parser when a descriptor is declared."""

    _parser: ClassVar[SettingsParser] = UNSET
    _file: ClassVar[Path | None] = None
    _members: ClassVar[list[Setting[Any]]] = []
    _data_type: BaseDataType[VT]

    def __init__(self, default: VT | BaseDataType[VT] = UNSET) -> None:
        """Declare a setting with ``default``."""
        if default is UNSET or default is None:
            msg = "A setting needs a default value."
            raise InvalidDefaultError(msg)
        self._data_type = BaseDataType.cast(default)
        type(self)._ensure_parser()

    def __init_subclass__(cls) -> None:
        """Start a new family that inherits the parent's flags but not its storage."""
        super().__init_subclass__()
        parent = cls._find_parent()
        for flag in ("validate_types", "write_on_edit", "persist_defaults"):
            if flag not in cls.__dict__:
                setattr(cls, flag, getattr(parent, flag))
        cls._members = []
        cls._parser = UNSET
        cls._file = None

    def __set_name__(self, owner: type, name: str) -> None:
        """Register the descriptor under ``<owner qualname>.<name>``."""
        self.name = name
        self._section = self._section_name(owner)
        self._setting = name
        cls = type(self)
        cls._members.append(self)
        if cls.persist_defaults and not cls._parser.has_option(self._section, self._setting):
            cls._parser.set(self._section, self._setting, self._data_type)

    def __get__(self, obj: object, obj_type: type | None = None) -> VT:
        """Read, convert and validate the stored value."""
        return self.value

    def __set__(self, obj: object, value: VT) -> None:
        """Validate ``value`` and store it."""
        self._data_type.value = value
        self._check(value)
        type(self)._store(self._section, self._setting, self._data_type)

    @property
    def key(self) -> str:
        """``section.option`` path of this setting."""
        return f"{self._section}.{self._setting}"

    @property
    def value(self) -> VT:
        """Current typed value."""
        raw = type(self)._parser.get(self._section, self._setting, fallback=UNSET)
        if raw is UNSET:
            return self._data_type.default
        converted = self.convert(raw)
        self._data_type.value = converted
        self._check(converted)
        return converted

    def convert(self, value: str) -> VT:
        """Convert stored text with this setting's data type."""
        return self._data_type.convert(value)

    def _check(self, value: object) -> None:
        if not type(self).validate_types:
            return
        expected = self._data_type.type
        if not isinstance(value, expected):
            msg = f"{self.key} expects <{expected.__name__}>, got <{type(value).__name__}>."
            raise InvalidConverterError(msg)
        try:
            self._data_type.validate()
        except InvalidConverterError as exc:
            msg = f"Invalid value for {self.key}: {exc}"
            raise InvalidConverterError(msg) from exc

    @classmethod
    def members(cls) -> tuple[Setting[Any], ...]:
        """Descriptors declared with this family, in declaration order."""
        return tuple(cls._members)

    @classmethod
    def resolved(cls) -> dict[str, Any]:
        """Snapshot of every member as ``{"section.option": value}``."""
        return {member.key: member.value for member in cls._members}

    @classmethod
    def set_file(cls, file: Path) -> None:
        """Bind ``file``: its values win, missing options keep their current value."""
        if cls is Setting:
            msg = "Subclass Setting before binding a file."
            raise TypeError(msg)
        parser = cls._detect_parser(file)
        parser.read(file)
        previous = cls._parser
        for member in cls._members:
            if not parser.has_option(member._section, member._setting):
                text = previous.get(member._section, member._setting, fallback=UNSET)
                parser.set(member._section, member._setting, member._data_type if text is UNSET else text)
        cls._parser = parser
        cls._file = file
        logger.debug(f"{cls.__name__} bound to {file}")
        if cls.write_on_edit:
            cls.write()

    @classmethod
    def write(cls) -> None:
        """Write the parser to the bound file."""
        if cls._file is None:
            msg = f"No file bound. Use {cls.__name__}.set_file() first."
            raise ValueError(msg)
        with cls._file.open("w", encoding="utf-8") as fh:
            cls._parser.write(fh)

    @classmethod
    def dump(cls, file: Path) -> None:
        """Write the current value of every member to ``file`` without binding it."""
        parser = cls._detect_parser(file)
        for member in cls._members:
            member._data_type.value = member.value
            parser.set(member._section, member._setting, member._data_type)
        with file.open("w", encoding="utf-8") as fh:
            parser.write(fh)

    @classmethod
    def reset(cls) -> None:
        """Drop the bound file and every assigned value, restoring defaults."""
        cls._parser = cls._new_parser()
        cls._file = None
        for member in cls._members:
            member._data_type.value = member._data_type.default
            if cls.persist_defaults:
                cls._parser.set(member._section, member._setting, member._data_type)

    @classmethod
    def _ensure_parser(cls) -> None:
        if not cls._parser:
            cls._parser = cls._new_parser()

    @classmethod
    def _new_parser(cls) -> SettingsParser:
        return IniParser()

    @classmethod
    def _store(cls, section: str, setting: str, value: object) -> None:
        cls._parser.set(section, setting, value)
        if cls.write_on_edit and cls._file is not None:
            cls.write()

    @classmethod
    def _find_parent(cls) -> type[Setting[Any]]:
        for base in cls.__bases__:
            if issubclass(base, Setting):
                return base
        return Setting

    @staticmethod
    def _detect_parser(file: Path) -> SettingsParser:
        match file.suffix.lower():
            case ".ini" | ".cfg":
                return IniParser()
            case ".json" | ".toml" | ".yaml" | ".yml":
                from splatkit.ext.parsers import MsgspecParser  # noqa: PLC0415

                return MsgspecParser()
            case ".env":
                return EnvParser()
            case suffix:
                msg = f"Unsupported settings file extension: {suffix!r}"
                raise ValueError(msg)

    @staticmethod
    def _section_name(owner: type) -> str:
        qualname = getattr(owner, "__qualname__", owner.__name__)
        _, _, tail = qualname.rpartition("<locals>.")
        return tail or qualname


class EnvSetting(Setting[VT]):
    """Family backed by environment variables; never writes files."""

    write_on_edit: ClassVar[bool] = False
    persist_defaults: ClassVar[bool] = False

    @classmethod
    def load_dotenv(cls, file: Path) -> None:
        """Read ``file`` as a ``.env`` file below the process environment."""
        cls._ensure_parser()
        cls._parser.read(file)

    @classmethod
    def _new_parser(cls) -> SettingsParser:
        return EnvParser()


__all__ = ["EnvSetting", "SectionMeta", "Setting"]
