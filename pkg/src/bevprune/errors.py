"""Exception types shared across the package.

The CLI maps these onto its exit-code contract:
  2 usage, 3 prerequisite missing, 4 data/format error, 5 numeric divergence.
"""


class BevPruneError(Exception):
    """Base class for package errors."""


class DimensionMismatchError(BevPruneError, ValueError):
    """Arrays / grids with incompatible dimensions were combined."""


class FormatError(BevPruneError, ValueError):
    """A binary or JSON artifact is malformed.

    Carries the byte offset of the failure when it is known.
    """

    def __init__(self, message: str, *, path=None, offset=None):
        self.path = path
        self.offset = offset
        detail = message
        if path is not None:
            detail = f"{path}: {detail}"
        if offset is not None:
            detail = f"{detail} (byte offset {offset})"
        super().__init__(detail)


class PrerequisiteError(BevPruneError):
    """A pipeline stage was invoked before its inputs exist."""


class DataError(BevPruneError, ValueError):
    """Invalid configuration or scene data."""


class DivergenceError(BevPruneError, ArithmeticError):
    """Training produced a non-finite loss."""
