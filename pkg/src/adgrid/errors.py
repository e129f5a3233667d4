"""Exception hierarchy.

Everything raised for bad input data derives from :class:`DataError`, which the
command line maps to exit status 2.
"""


class DataError(ValueError):
    """Input data violates a documented contract."""


class FormatError(DataError):
    """A file or stream is not well formed for its declared format."""


class DimensionMismatchError(DataError):
    pass


class DegenerateInputError(DataError):
    """Operation is undefined for the given input (zero vector, zero extent, ...)."""


class InsufficientDataError(DataError):
    pass
