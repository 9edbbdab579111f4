"""Optional integrations.

Modules here depend on extras (``pydantic`` is bundled, ``requests`` comes with
``splatkit[remote]``, YAML/TOML settings need ``splatkit[yaml]``/``splatkit[toml]``).
Nothing is imported eagerly.
"""
from __future__ import annotations

__all__: list[str] = []
