"""Typed values stored behind :class:`splatkit.config.Setting` descriptors.

Every setting is kept as text by its parser. A data type knows how to turn that
text back into a Python value and whether the value is acceptable. The range
checked types (:class:`UnitInterval`, :class:`PositiveFloat`, :class:`PositiveInt`)
carry the constraints of loss weights, thresholds and iteration budgets.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Generic, TypeVar, cast

from .exceptions import InvalidConverterError, InvalidDefaultError
from .sentinels import UNSET

T = TypeVar("T")


class BaseDataType(ABC, Generic[T]):
    """A value with a text conversion and a validity check."""

    def __init__(self, default: T) -> None:
        """Store the default, which is also the initial value."""
        self.default = default
        self.value = default
        self.type = type(default)

    def __str__(self) -> str:
        """Return the text written to settings files."""
        return str(self.value)

    @abstractmethod
    def convert(self, value: str) -> T:
        """Convert stored text to the typed value."""

    def validate(self) -> bool:
        """Check the current value against the declared type."""
        if isinstance(self.value, self.type):
            return True
        msg = f"Value {self.value!r} is not of type {self.type.__name__}."
        raise InvalidConverterError(msg)

    @staticmethod
    def cast(default: T | BaseDataType[T]) -> BaseDataType[T]:
        """Pick the data type matching a plain default value."""
        # bool is an int subclass and has no data type.
        match default:
            case BaseDataType():                               return default
            case int() if not isinstance(default, bool):       return cast("BaseDataType[T]", Integer(default))
            case float():                                      return cast("BaseDataType[T]", Float(default))
            case str():                                        return cast("BaseDataType[T]", String(default))
            case tuple():                                      return cast("BaseDataType[T]", Tuple(default))
            case _:
                msg = f"Unsupported default value type: {type(default).__name__}. Wrap it in a BaseDataType subclass."
                raise InvalidDefaultError(msg)


class String(BaseDataType[str]):
    """Free text."""

    def __init__(self, default: str = "") -> None:  # noqa: D107
        super().__init__(default)

    def convert(self, value: str) -> str:  # noqa: D102
        return value


class Float(BaseDataType[float]):
    """A real number."""

    def __init__(self, default: float = 0.0) -> None:  # noqa: D107
        super().__init__(float(default))

    def convert(self, value: str) -> float:  # noqa: D102
        return float(value)


class Integer(BaseDataType[int]):
    """A whole number in decimal notation."""

    def __init__(self, default: int = 0) -> None:  # noqa: D107
        super().__init__(default)

    def convert(self, value: str) -> int:  # noqa: D102
        return int(value, 10)


class UnitInterval(Float):
    """A float in the closed interval [0, 1], such as a loss weight or threshold."""

    def validate(self) -> bool:  # noqa: D102
        super().validate()
        if not 0.0 <= self.value <= 1.0:
            msg = f"Value {self.value} is outside [0, 1]."
            raise InvalidConverterError(msg)
        return True


class PositiveFloat(Float):
    """A strictly positive float."""

    def validate(self) -> bool:  # noqa: D102
        super().validate()
        if not self.value > 0.0:
            msg = f"Value {self.value} must be > 0."
            raise InvalidConverterError(msg)
        return True


class PositiveInt(Integer):
    """A whole number >= ``minimum`` (1 unless stated)."""

    def __init__(self, default: int = 1, minimum: int = 1) -> None:  # noqa: D107
        super().__init__(default)
        self.minimum = minimum

    def validate(self) -> bool:  # noqa: D102
        super().validate()
        if self.value < self.minimum:
            msg = f"Value {self.value} must be >= {self.minimum}."
            raise InvalidConverterError(msg)
        return True


class Tuple(BaseDataType[tuple[T, ...]], Generic[T]):
    """A fixed tuple written comma separated, e.g. the edit weight triple ``1.0,1.0,0.1``.

    Elements are converted with the data type of the first default element, so
    defaults must be non-empty unless ``data_type`` is given.
    """

    separator = ","

    def __init__(self, default: tuple[T, ...], *, data_type: BaseDataType[T] = UNSET) -> None:  # noqa: D107
        if not default and data_type is UNSET:
            msg = "Tuple needs a non-empty default or an explicit data_type."
            raise InvalidDefaultError(msg)
        super().__init__(tuple(default))
        self._element = data_type if data_type is not UNSET else BaseDataType.cast(default[0])

    def __str__(self) -> str:  # noqa: D105
        return self.separator.join(str(item) for item in self.value)

    def convert(self, value: str) -> tuple[T, ...]:  # noqa: D102
        if not value.strip():
            return ()
        return tuple(self._element.convert(part.strip()) for part in value.split(self.separator))


__all__ = [
    "BaseDataType",
    "Float",
    "Integer",
    "PositiveFloat",
    "PositiveInt",
    "String",
    "Tuple",
    "UnitInterval",
]
