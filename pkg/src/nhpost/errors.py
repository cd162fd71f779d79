"""Exception hierarchy shared by every nhpost module."""


class NHPostError(Exception):
    """Base class for all errors raised by nhpost."""


class DimensionError(NHPostError, ValueError):
    """An operator or state has the wrong shape for the requested operation."""


class PreconditionError(NHPostError, ValueError):
    """Inputs violate a documented precondition."""


class WellFormednessError(NHPostError):
    """A renormalization or postselection step hit a zero-norm branch."""


class NotDiagonalizableError(NHPostError):
    """The operator is defective within the configured tolerance."""


class BrokenPhaseError(PreconditionError):
    """A PT-symmetric construction was requested outside the unbroken phase."""


class NumericalError(NHPostError):
    """A numerical routine failed (overflow, instability, lost precision)."""


class ConfigError(NHPostError):
    """An experiment configuration is malformed."""
