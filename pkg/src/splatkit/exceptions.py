"""Exceptions raised by splatkit.

Input problems derive from ``ValueError``; numerical aborts and service failures
carry the context a caller needs to report them (splat index, dataset cell,
HTTP status, refusal reason).
"""
from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from pathlib import Path


class SplatkitError(Exception):
    """Base class for every error raised on purpose by splatkit."""


# Settings layer


class InvalidDefaultError(SplatkitError, ValueError):
    """Raised when a setting default is missing or of an unsupported type."""


class InvalidConverterError(SplatkitError, ValueError):
    """Raised when a stored setting cannot be converted back into its declared type or range."""


class SettingsPathConflictError(SplatkitError, ValueError):
    """Raised when a nested settings section collides with a scalar value.

    For example, if ``Modeling.seed`` is a scalar, the section ``Modeling.seed.extra``
    cannot be created without destroying it.
    """


class ConfigError(SplatkitError, ValueError):
    """Raised when a run configuration is inconsistent (CLI exit code 2)."""


# Geometry and parameters


class InvalidParameterError(SplatkitError, ValueError):
    """Raised for a non-unit quaternion, non-positive scale or out-of-range splat field."""


class DegenerateCovarianceError(SplatkitError, ValueError):
    """Raised when a covariance is too ill-conditioned to invert."""


class LayoutError(SplatkitError, ValueError):
    """Raised when a parameter vector does not match its layout or template scene."""


class DegenerateGeometryError(SplatkitError, ValueError):
    """Raised for triangles whose area is below the degeneracy floor."""


class MeshError(SplatkitError, ValueError):
    """Raised for empty meshes and out-of-range triangle indices."""


class BindingError(SplatkitError, ValueError):
    """Raised when bindings reference triangles the mesh does not have."""


class DimensionMismatchError(SplatkitError, ValueError):
    """Raised when images, masks or cameras disagree on resolution."""


class IncompleteGridError(SplatkitError, ValueError):
    """Raised when per-node masks do not cover every (time, pose) node."""


class EmptyGridError(SplatkitError, ValueError):
    """Raised when a mask grid is queried without any nodes."""


class AlignmentError(SplatkitError, ValueError):
    """Raised when two scenes that must be index-aligned have different splat counts."""


class InvalidWeightsError(SplatkitError, ValueError):
    """Raised for negative loss weights or an all-zero edit weight triple."""


# Optimisation


class NonFiniteError(SplatkitError, ArithmeticError):
    """Raised when a loss or gradient becomes NaN or infinite."""

    def __init__(self, message: str, splat_index: int | None = None) -> None:
        """Record the first offending splat, when one can be identified."""
        super().__init__(message)
        self.splat_index = splat_index


class TrainingAbortedError(SplatkitError, RuntimeError):
    """Raised when a training loop stops early; the last good checkpoint is kept."""

    def __init__(self, message: str, checkpoint: Path | None = None) -> None:
        """Remember where the last good checkpoint lives."""
        super().__init__(message)
        self.checkpoint = checkpoint


# Editing services


class PromptRefusedError(SplatkitError):
    """Raised when a prompt cannot be turned into an edit plan (CLI exit code 3)."""

    def __init__(self, reason: str) -> None:
        """Keep the human readable refusal reason."""
        super().__init__(reason)
        self.reason = reason


class NoTargetError(PromptRefusedError):
    """Raised when an instruction resolves to no label, region or splat."""


class ServiceError(SplatkitError, RuntimeError):
    """Raised when a remote service answers with an error."""

    def __init__(self, message: str, status: int | None = None, body: str = "") -> None:
        """Capture the HTTP status and body of the failed exchange."""
        super().__init__(message)
        self.status = status
        self.body = body


class RetryableServiceError(ServiceError):
    """Raised when a remote call timed out or failed transiently after all retries."""


class ContractViolationError(ServiceError):
    """Raised when an editor changes pixels outside its mask or resizes the image."""


# Files


class DatasetError(SplatkitError, ValueError):
    """Raised for invalid manifests and unusable dataset contents."""

    def __init__(self, message: str, cell: tuple[int, int] | None = None) -> None:
        """Optionally point at the offending (time, pose) cell."""
        super().__init__(message)
        self.cell = cell


class MissingFileError(DatasetError):
    """Raised when a file referenced by a manifest does not exist."""


class TopologyMismatchError(DatasetError):
    """Raised when mesh frames of one dataset do not share triangles."""


class SplatFileError(SplatkitError, ValueError):
    """Raised for truncated or corrupted splat files."""


class SplatFileVersionError(SplatFileError):
    """Raised when a splat file has an unknown magic or version."""


class DirectoryLockedError(SplatkitError, RuntimeError):
    """Raised when another writer holds the output directory lock."""
