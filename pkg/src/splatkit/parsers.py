"""Storage backends for settings sections.

- ``SettingsParser``: the protocol every backend implements
- ``IniParser``: ``ConfigParser`` adapter, also the in-memory store used before a file is bound
- ``EnvParser``: read-only view over environment variables and an optional ``.env`` file

The msgspec backend for JSON, TOML and YAML lives in ``splatkit.ext.parsers``.
"""
from __future__ import annotations

import os
import sys
from configparser import ConfigParser
from typing import TYPE_CHECKING

from splatkit.sentinels import UNSET

if sys.version_info >= (3, 12):
    from typing import Protocol, override
else:
    from typing_extensions import Protocol, override

if TYPE_CHECKING:
    from pathlib import Path
    from typing import TextIO


class SettingsParser(Protocol):
    """What a :class:`splatkit.config.Setting` family needs from its storage."""

    def read(self, file: Path | None) -> None:
        """Load values from ``file``; a missing file leaves the store untouched."""
    def write(self, io: TextIO) -> None:
        """Serialise every section to ``io``."""
    def has_section(self, section: str) -> bool:
        """Tell whether ``section`` exists."""
    def add_section(self, section: str) -> None:
        """Create ``section`` when it does not exist yet."""
    def has_option(self, section: str, option: str) -> bool:
        """Tell whether ``option`` exists in ``section``."""
    def get(self, section: str, option: str, fallback: str = UNSET) -> str:
        """Return the stored text, or ``fallback`` when the option is absent."""
    def set(self, section: str, option: str, value: object) -> None:
        """Store ``value`` as text."""


class IniParser(SettingsParser):
    """INI files through ``ConfigParser``, with interpolation disabled."""

    def __init__(self) -> None:  # noqa: D107
        self.parser = ConfigParser(interpolation=None)
        self.parser.optionxform = str  # keep option case

    @override
    def read(self, file: Path | None) -> None:
        if file is not None and file.exists():
            self.parser.read(file, encoding="utf-8")

    @override
    def write(self, io: TextIO) -> None:
        self.parser.write(io)

    @override
    def has_section(self, section: str) -> bool:
        return self.parser.has_section(section)

    @override
    def add_section(self, section: str) -> None:
        if not self.parser.has_section(section):
            self.parser.add_section(section)

    @override
    def has_option(self, section: str, option: str) -> bool:
        return self.parser.has_option(section, option)

    @override
    def get(self, section: str, option: str, fallback: str = UNSET) -> str:
        return self.parser.get(section, option, fallback=fallback)

    @override
    def set(self, section: str, option: str, value: object) -> None:
        self.add_section(section)
        self.parser.set(section, option, str(value))


class EnvParser(SettingsParser):
    """Environment variables, named after the upper-cased option (``editor_url`` -> ``EDITOR_URL``).

    Sections are ignored. Lookups are live, so variables exported after import are
    seen. Precedence, highest first: values assigned through :meth:`set` (CLI flags),
    the process environment, the ``.env`` file, the descriptor default.
    """

    def __init__(self) -> None:  # noqa: D107
        self.overrides: dict[str, str] = {}
        self.dotenv: dict[str, str] = {}

    @staticmethod
    def variable(option: str) -> str:
        """Environment variable name for ``option``."""
        return option.upper()

    @override
    def read(self, file: Path | None) -> None:
        self.dotenv = {}
        if file is None or not file.exists():
            return
        for raw in file.read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            match line.removeprefix("export ").split("=", 1):
                case [key, value]:
                    self.dotenv[key.strip()] = value.strip().strip("\"'")
                case _:
                    continue

    @override
    def write(self, io: TextIO) -> None:
        msg = "EnvParser is read-only; secrets are never written to disk."
        raise NotImplementedError(msg)

    @override
    def has_section(self, section: str) -> bool:
        return True

    @override
    def add_section(self, section: str) -> None:
        """Sections do not exist for environment variables."""

    @override
    def has_option(self, section: str, option: str) -> bool:
        return self.get(section, option) is not UNSET

    @override
    def get(self, section: str, option: str, fallback: str = UNSET) -> str:
        name = self.variable(option)
        if name in self.overrides:
            return self.overrides[name]
        if name in os.environ:
            return os.environ[name]
        return self.dotenv.get(name, fallback)

    @override
    def set(self, section: str, option: str, value: object) -> None:
        self.overrides[self.variable(option)] = str(value)
