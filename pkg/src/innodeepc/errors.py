"""Exception hierarchy shared by every module."""


class InnoDeePCError(Exception):
    """Base class for all errors raised by this package."""


class InputError(InnoDeePCError, ValueError):
    """Malformed arguments: wrong shapes, lengths or values."""


class DataLengthError(InputError):
    """Not enough samples for the requested horizons or regressors."""


class ConfigError(InnoDeePCError):
    """Invalid configuration (missing field, unknown key, bad value)."""


class NumericalError(InnoDeePCError):
    """A dense linear-algebra routine failed to converge."""


class CertificateError(InnoDeePCError):
    """A stability certificate or convergence guarantee could not be established."""


class RankError(InnoDeePCError):
    """A matrix that must have full row rank does not."""

    def __init__(self, message, sigma_min=None):
        super().__init__(message)
        self.sigma_min = sigma_min
