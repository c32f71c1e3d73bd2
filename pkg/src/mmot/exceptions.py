"""Exception types raised by :mod:`mmot`."""


class MMOTError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(MMOTError, ValueError):
    """A parameter is outside its admissible range."""


class DomainError(MMOTError, ValueError):
    """A point was queried outside the domain of a map, cdf or potential."""


class DensityFormatError(MMOTError, ValueError):
    """A density file could not be parsed or violates the file contract."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class InfeasibleError(MMOTError):
    """A marginal constraint cannot be met by the current kernel support."""

    def __init__(self, message, axis=None, index=None):
        super().__init__(message)
        self.axis = axis
        self.index = index


class SingularIntegrandError(MMOTError, ValueError):
    """A co-motion map touches the identity where the density has mass."""
