"""Exception taxonomy shared by all accd modules."""


class AccdError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(AccdError):
    """A file does not follow its documented container format."""


class ShapeError(AccdError):
    """An array or grid has an unexpected rank, size or resolution."""


class DataError(AccdError):
    """File parsed fine but its values violate an invariant."""


class ConfigError(AccdError):
    """Invalid run configuration value."""


class AlignmentError(AccdError):
    """Frame counts of paired sequences do not match."""


class InsufficientDataError(AccdError):
    """Not enough samples for the requested model size."""


class NumericError(AccdError):
    """A numerical routine produced a non-finite intermediate."""


class ReadError(AccdError):
    """Truncated or unreadable binary payload."""
