"""Exception types raised by the solver."""


class UltraspectralError(Exception):
    """Base class for solver failures."""


class SingularMatrixError(UltraspectralError):
    """A factorization or triangular solve met a numerically zero pivot."""


class StepperError(UltraspectralError):
    """A time step could not be completed (singular system, Newton failure)."""


class InvalidStateError(UltraspectralError):
    """A stepper was called without the history it needs."""


class ResolutionError(UltraspectralError):
    """No plateau appeared before the size cap was reached."""


class BoundaryCorrectionError(UltraspectralError):
    """The trailing block of the boundary rows is singular."""


class PoleCollisionError(SingularMatrixError):
    """A shifted system of a pole-sum evaluation is singular."""


class ConfigError(UltraspectralError):
    """Bad run configuration or missing data table."""
