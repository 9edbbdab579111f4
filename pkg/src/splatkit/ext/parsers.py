"""msgspec backed settings parser for JSON, TOML and YAML files.

Sections map to nested tables using dot notation: ``Editing.Anchor`` is stored
as ``{"Editing": {"Anchor": {...}}}``. Reading TOML and YAML needs the encoders
msgspec delegates to:

    pip install splatkit[toml]   # tomli-w
    pip install splatkit[yaml]   # pyyaml
"""
from __future__ import annotations

import sys
from typing import TYPE_CHECKING, Any, ClassVar

import msgspec
import msgspec.json
import msgspec.toml
import msgspec.yaml

from splatkit.data_types import BaseDataType
from splatkit.exceptions import SettingsPathConflictError
from splatkit.parsers import SettingsParser
from splatkit.sentinels import UNSET

if sys.version_info >= (3, 12):
    from typing import override
else:
    from typing_extensions import override

if TYPE_CHECKING:
    from pathlib import Path
    from types import ModuleType
    from typing import TextIO

Table = dict[str, Any]


class MsgspecParser(SettingsParser):
    """Nested-table settings store encoded with msgspec."""

    _codecs: ClassVar[dict[str, ModuleType]] = {
        ".json": msgspec.json,
        ".toml": msgspec.toml,
        ".yaml": msgspec.yaml,
        ".yml": msgspec.yaml,
    }

    def __init__(self) -> None:  # noqa: D107
        self.data: Table = {}

    @override
    def read(self, file: Path | None) -> None:
        if file is None or not file.exists():
            return
        codec = self._codec(file.suffix)
        content = file.read_bytes()
        if not content.strip():
            self.data = {}
            return
        try:
            decoded = codec.decode(content)
        except ImportError as exc:
            msg = f"Reading {file.suffix} settings needs the matching extra: pip install splatkit[{file.suffix[1:]}]"
            raise ImportError(msg) from exc
        self.data = decoded if isinstance(decoded, dict) else {}

    @override
    def write(self, io: TextIO) -> None:
        codec = self._codec("." + io.name.rsplit(".", 1)[-1])
        encoded = codec.encode(self.data)
        io.write(encoded.decode("utf-8") if isinstance(encoded, bytes) else str(encoded))

    @override
    def has_section(self, section: str) -> bool:
        return self._table(section, create=False) is not None

    @override
    def add_section(self, section: str) -> None:
        self._table(section, create=True)

    @override
    def has_option(self, section: str, option: str) -> bool:
        table = self._table(section, create=False)
        return table is not None and option in table

    @override
    def get(self, section: str, option: str, fallback: str = UNSET) -> str:
        table = self._table(section, create=False)
        if table is None or option not in table:
            return fallback
        value = table[option]
        if isinstance(value, bool):
            return str(value).lower()
        if isinstance(value, list):
            return ",".join(str(item) for item in value)
        return str(value)

    @override
    def set(self, section: str, option: str, value: object) -> None:
        table = self._table(section, create=True)
        if table is None:  # pragma: no cover - create=True either returns a table or raises
            return
        if isinstance(value, BaseDataType):
            native = value.value
            # Native scalars keep their JSON/TOML type; anything with a custom text form is stored as text.
            plain = isinstance(native, (int, float)) or (type(native) is str and native == str(value))
            table[option] = native if plain else str(value)
        else:
            table[option] = value

    def _codec(self, suffix: str) -> ModuleType:
        codec = self._codecs.get(suffix.lower())
        if codec is None:
            msg = f"Unsupported settings file extension: {suffix!r}"
            raise ValueError(msg)
        return codec

    def _table(self, section: str, *, create: bool) -> Table | None:
        current: Any = self.data
        walked: list[str] = []
        for part in section.split(".") if section else ():
            walked.append(part)
            if part not in current:
                if not create:
                    return None
                current[part] = {}
            current = current[part]
            if not isinstance(current, dict):
                if not create:
                    return None
                msg = f"Cannot use {section!r} as a section: {'.'.join(walked)!r} holds a scalar."
                raise SettingsPathConflictError(msg)
        return current
