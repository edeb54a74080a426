"""Exception hierarchy shared by the solver, auditor and CLI."""


class KHessianError(Exception):
    """Base class for every error raised by this package."""


class DomainError(KHessianError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InadmissibleError(DomainError):
    """A field fails k-admissibility at one or more grid points.

    ``points`` holds the offending coordinates (one row per point).
    """

    def __init__(self, message, points=None):
        super().__init__(message)
        self.points = points


class ConfigurationError(KHessianError):
    """Inputs are individually valid but cannot be used together."""


class GeometryError(KHessianError):
    """The boundary of a domain could not be resolved."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class InitializationError(KHessianError):
    """A Newton solve was started from an unusable initial guess."""


class ConvergenceError(KHessianError):
    """Damped Newton failed; ``report`` carries the diagnostics."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InputError(KHessianError):
    """Malformed user input (config text, expression, flag)."""
