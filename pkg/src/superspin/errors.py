"""Exception types raised across the package."""


class SuperspinError(Exception):
    """Base class for all package errors."""


class PreconditionError(SuperspinError, ValueError):
    """An argument violates the documented contract of an operation."""


class SymmetryBrokenError(SuperspinError):
    """The superspin reduction is not valid for the requested model."""


class UnsupportedSectorError(SuperspinError):
    """A state lies outside the maximal-Casimir superspin sector."""


class NumericalStateError(SuperspinError):
    """A state failed a trace, Hermiticity or positivity check."""


class IntegrationError(SuperspinError):
    """Time integration breached its tolerances.

    Attributes
    ----------
    t : float
        Time at which the breach was detected.
    """

    def __init__(self, message, t):
        super().__init__(f"{message} (t = {t:.6g})")
        self.t = t


class InvalidModelError(SuperspinError):
    """A coupling model cannot be unravelled into physical jump channels."""


class ConfigError(SuperspinError):
    """A scenario configuration failed validation."""
