"""Exception types raised across the package."""


class QRSError(Exception):
    """Base class for all package errors."""


class InvalidInputError(QRSError, ValueError):
    """Malformed or out-of-domain input (non-finite, non-Hermitian, bad range)."""


class ModelConstructionError(QRSError):
    """Interaction coefficients could not be extracted from a Hamiltonian."""


class DegenerateStateError(QRSError):
    """A filter state has (numerically) zero total trace."""


class NumericalConsistencyError(QRSError):
    """A quantity that must be a probability fell outside [0, 1]."""


class CapacityError(QRSError):
    """Requested problem size exceeds what brute-force routines can handle."""


class UndefinedConditionalError(QRSError):
    """Conditioning on a measurement record of probability zero."""
