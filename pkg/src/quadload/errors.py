"""Exception types shared across the package."""


class QuadloadError(Exception):
    """Base class for all package errors."""


class ContractViolation(QuadloadError):
    """An operation was called with inputs that break its preconditions."""


class DivergenceError(QuadloadError):
    """The simulation state blew up numerically.

    Carries the substep index at which the bound was first exceeded.
    """

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (substep {step})")
        self.step = step


class ConfigError(QuadloadError):
    """A configuration file or override failed schema validation."""


class CheckpointError(QuadloadError):
    """A checkpoint file is corrupt, truncated, or incompatible."""


class RoleMismatchError(QuadloadError):
    """A policy checkpoint's role flags do not match the requested use."""
