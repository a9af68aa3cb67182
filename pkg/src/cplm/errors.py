"""Exception types shared across the package."""


class CplmError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(CplmError, ValueError):
    """Index out of range or incompatible shapes."""


class CapacityError(CplmError, RuntimeError):
    """Dense materialization would exceed the allowed allocation."""


class FormatError(CplmError, ValueError):
    """Malformed binary file.

    ``offset`` is the byte position at which the problem was detected,
    or None when the file is truncated short of the expected length.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SolveFailure(CplmError, RuntimeError):
    """Factorization of the damped normal system failed at damping ``mu``."""

    def __init__(self, message, mu):
        super().__init__(f"{message} (mu={mu!r})")
        self.mu = mu


class DivergenceError(CplmError, RuntimeError):
    """The solver could not make progress even after escalating the damping."""
