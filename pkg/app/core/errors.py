"""Exception hierarchy shared by the services, CLI and API."""

from typing import Any


class PlatoonLabError(ValueError):
    """Base error carrying a stable error code."""

    code = "PLATOON_LAB_ERROR"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_detail(self) -> dict[str, Any]:
        """Render as the API error body."""
        return {"error": self.code, "message": self.message}


class InvalidInputError(PlatoonLabError):
    code = "INVALID_INPUT"


class ConfigurationError(PlatoonLabError):
    code = "INVALID_CONFIG"


class SequencingError(PlatoonLabError):
    code = "SEQUENCING"


class LayoutMismatchError(PlatoonLabError):
    code = "LAYOUT_MISMATCH"


class DimensionMismatchError(PlatoonLabError):
    code = "DIMENSION_MISMATCH"


class StaleCacheError(PlatoonLabError):
    code = "STALE_CACHE"


class TrainingDivergenceError(PlatoonLabError):
    """Raised when a loss or gradient turns non-finite."""

    code = "TRAINING_DIVERGED"


class KernelNormalizationError(PlatoonLabError):
    code = "KERNEL_NOT_NORMALIZED"


class UnboundedOutcomeError(PlatoonLabError):
    code = "UNBOUNDED_OUTCOMES"


class ConditioningMisuseError(PlatoonLabError):
    code = "CONDITIONING_MISUSE"


class MissingPolicyError(PlatoonLabError):
    code = "MISSING_POLICY"


class MissingArtifactError(PlatoonLabError):
    """A required artifact is absent; the message names the command that produces it."""

    code = "MISSING_ARTIFACT"


class InexactSolutionError(PlatoonLabError):
    """An ordering check met a solution that is only a bound."""

    code = "INEXACT_SOLUTION"
