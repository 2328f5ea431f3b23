"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A configuration value or combination of values is invalid."""


class ShapeError(ValueError):
    """An array argument has the wrong shape for the requested operation."""


class IncompatibleMapsError(ValueError):
    """Two parameter maps disagree on a key set or on the shape of a key."""


class TapeMismatchError(RuntimeError):
    """A forward tape does not belong to the network it was replayed on."""


class EmptyBatchError(ValueError):
    """An operation received a batch with no samples."""


class DataFormatError(ValueError):
    """An input file could not be parsed into a dataset."""
