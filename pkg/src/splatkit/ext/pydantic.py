"""Bridge validated pydantic models into setting sections."""
from __future__ import annotations

from typing import TYPE_CHECKING

try:
    import pydantic  # noqa: F401
except ImportError as exc:
    msg = "splatkit.ext.pydantic requires pydantic. Install it via 'pip install pydantic'."
    raise ImportError(msg) from exc

from splatkit.config import Setting

if TYPE_CHECKING:
    from pydantic import BaseModel


def apply_model(section: type, model: BaseModel, *, exclude_none: bool = True) -> list[str]:
    """Copy fields of ``model`` onto same-named settings of ``section``.

    Fields that are ``None`` are skipped unless ``exclude_none`` is false, so an
    unset CLI flag keeps the section's current value. Returns the names applied.
    """
    applied: list[str] = []
    for field, value in model.model_dump(exclude_none=exclude_none).items():
        if isinstance(section.__dict__.get(field), Setting):
            setattr(section, field, value)
            applied.append(field)
    return applied


__all__ = ["apply_model"]
