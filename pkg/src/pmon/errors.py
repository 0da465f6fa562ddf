"""Exception types raised across the package."""


class PmonError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PmonError, ValueError):
    """Invalid mission, integrator, or experiment configuration."""


class InfeasibleConfigurationError(ConfigurationError):
    """The mission space cannot contain even the thinnest admissible ellipse."""


class DegenerateCoverageError(PmonError):
    """The effective coverage region is empty."""


class NumericalFailure(PmonError, ArithmeticError):
    """A non-finite value appeared in the simulated state."""

    def __init__(self, message, time=None, point_index=None):
        super().__init__(message)
        self.time = time
        self.point_index = point_index


class GrazingEventError(PmonError, ArithmeticError):
    """An endogenous event occurred with (near) zero crossing speed."""
