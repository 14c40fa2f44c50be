"""Exception taxonomy for ifusion."""

from __future__ import annotations

from typing import Any, Dict, Optional


class IFusionError(Exception):
    """Base class for all ifusion exceptions."""

    def __init__(
        self,
        message: str,
        *,
        error_code: str = "IFUSION_ERROR",
        details: Optional[Dict[str, Any]] = None,
    ) -> None:
        super().__init__(message)
        self.error_code = error_code
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.error_code, "message": str(self), "details": self.details}


class IFusionOperationalError(IFusionError):
    """
    Expected failures caused by inputs the caller does not fully control.

    Examples:
    - Config document fails validation
    - Feature archive is malformed or holds non-finite values
    - Checkpoint belongs to another config
    - Training diverges

    The CLI reports these as a JSON error object and exits nonzero.
    """

    def __init__(
        self,
        message: str,
        *,
        error_code: str = "OPERATIONAL_ERROR",
        details: Optional[Dict[str, Any]] = None,
    ) -> None:
        super().__init__(message, error_code=error_code, details=details)


class IFusionBugError(IFusionError):
    """
    Unexpected failures indicating a programming error.

    Examples:
    - Tensor shapes that disagree between two arguments
    - A loss composition asked for a term nobody computed
    - Reconstruction losses requested before the clean pass ran
    """

    def __init__(
        self,
        message: str,
        *,
        error_code: str = "BUG_ERROR",
        details: Optional[Dict[str, Any]] = None,
    ) -> None:
        super().__init__(message, error_code=error_code, details=details)


class ConfigError(IFusionOperationalError):
    """Invalid run configuration. error_code names the failing rule."""

    def __init__(
        self,
        message: str,
        *,
        error_code: str = "CONFIG_INVALID",
        details: Optional[Dict[str, Any]] = None,
    ) -> None:
        super().__init__(message, error_code=error_code, details=details)


class ArchiveLoadError(IFusionOperationalError):
    """Feature archive could not be read. details["file"] names the offending file."""

    def __init__(self, message: str, *, error_code: str, file: str, **extra: Any) -> None:
        super().__init__(message, error_code=error_code, details={"file": file, **extra})
        self.file = file


class CheckpointError(IFusionOperationalError):
    pass


class DivergenceError(IFusionOperationalError):
    """A loss term became NaN or infinite."""

    def __init__(self, term: str, *, epoch: int, step: int, value: float) -> None:
        super().__init__(
            f"Non-finite loss term '{term}' at epoch {epoch}, step {step}",
            error_code="NON_FINITE_LOSS",
            details={"term": term, "epoch": epoch, "step": step, "value": repr(value)},
        )
        self.term = term


class ShapeMismatchError(IFusionBugError):
    def __init__(self, message: str, **shapes: Any) -> None:
        super().__init__(
            message,
            error_code="SHAPE_MISMATCH",
            details={k: list(v) if isinstance(v, tuple) else v for k, v in shapes.items()},
        )


class MissingLossTermError(IFusionBugError):
    def __init__(self, term: str, *, stage: int) -> None:
        super().__init__(
            f"Loss term '{term}' is required for stage {stage} but was not computed",
            error_code="MISSING_LOSS_TERM",
            details={"term": term, "stage": stage},
        )


class MissingTargetsError(IFusionBugError):
    def __init__(self, message: str) -> None:
        super().__init__(message, error_code="MISSING_CLEAN_TARGETS")


class BatchTooSmallError(IFusionBugError):
    def __init__(self, size: int) -> None:
        super().__init__(
            f"Mutual-information bound needs at least 2 samples, got {size}",
            error_code="BATCH_TOO_SMALL",
            details={"batch_size": size},
        )


class NonFinitePredictionError(IFusionOperationalError):
    """Metrics were asked to score NaN or infinite values."""

    def __init__(self, what: str, *, count: int) -> None:
        super().__init__(
            f"{count} non-finite value(s) in {what}",
            error_code="NON_FINITE_PREDICTION",
            details={"what": what, "count": count},
        )
