"""Exception hierarchy shared across the package."""


class QuaffureError(Exception):
    """Base class for all package errors."""


class ValidationError(QuaffureError, ValueError):
    """Input failed a contract check (finiteness, ranges, missing files)."""


class ShapeError(ValidationError):
    """Array shapes or dimensions disagree."""


class LayoutError(ValidationError):
    """Texel assignment is inconsistent with a texture layout."""


class CapacityError(LayoutError):
    """More strands than texels."""


class GeometryError(QuaffureError, ValueError):
    """Degenerate geometry such as a zero-area triangle."""


class SingularityError(QuaffureError, ArithmeticError):
    """A gradient is undefined at the evaluated state."""


class ConfigError(ValidationError):
    """Invalid configuration value or combination."""


class SolverError(QuaffureError, RuntimeError):
    """Base class for solver failures; carries the energy trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class DivergedError(SolverError):
    """Non-finite energy or positions encountered."""


class StagnationError(SolverError):
    """Line search failed too many consecutive times."""


class UnknownGroomError(QuaffureError, KeyError):
    """Groom index not present in the embedding table."""


class TrainingError(QuaffureError, RuntimeError):
    """Non-finite training loss; ``sample`` describes the offending step."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample or {}


class CheckpointError(ValidationError):
    """Checkpoint missing, malformed, or inconsistent with the run."""
