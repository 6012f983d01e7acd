"""Exception hierarchy shared across the package."""


class AdaptDesignError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(AdaptDesignError):
    """Design points do not match the model's design-space dimension."""


class InvalidReference(AdaptDesignError):
    """A reference determinant or matrix is unusable (e.g. not positive)."""


class SingularInformation(AdaptDesignError):
    """An information matrix is numerically singular where invertibility is required."""


class UnknownModel(AdaptDesignError):
    """Requested builtin model name is not registered."""


class BoxViolation(AdaptDesignError):
    """A parameter or design box violates the constraints of the model family."""


class DegenerateSlope(AdaptDesignError):
    """Canonical transform requested with a (numerically) zero slope."""


class NotAvailable(AdaptDesignError):
    """No closed-form solver exists for the requested model."""


class NoInteriorRoot(AdaptDesignError):
    """Newton iteration for the unbounded two-point problem failed to converge."""


class MissingGLMBlock(AdaptDesignError):
    """Operation requires an exponential-family block the model does not carry."""


class PathAborted(AdaptDesignError):
    """An adaptive path could not be continued; carries a diagnostic message."""


class VersionMismatch(AdaptDesignError):
    """Recorded path was produced by an incompatible artifact version."""


class RecordIntegrityError(AdaptDesignError):
    """Recorded path is internally inconsistent (e.g. truncated)."""


class MisalignedCheckpoints(AdaptDesignError):
    """Two simulation summaries do not share comparable sample-size checkpoints."""


class ConfigError(AdaptDesignError):
    """A configuration file or dictionary failed validation."""
