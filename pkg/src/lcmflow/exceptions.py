"""Exception hierarchy shared by every module."""


class LcmFlowError(Exception):
    """Base class for errors raised by this package."""


class DomainError(LcmFlowError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class BehindCameraError(DomainError):
    """A point or ray does not lie strictly in front of the camera."""


class CalibrationError(LcmFlowError, RuntimeError):
    """Likelihood calibration cannot proceed, e.g. knots starved of data."""

    def __init__(self, message, starved=None):
        super().__init__(message)
        self.starved = dict(starved or {})


class NumericalError(LcmFlowError, ArithmeticError):
    """An optimiser or solver failed to produce a usable result."""
