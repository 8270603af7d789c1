"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class ConfigurationError(ValueError):
    """A model or run configuration does not close or contains bad values."""


class FormatError(ValueError):
    """An input file is not in the expected on-disk format."""


class CheckpointError(ValueError):
    """A checkpoint file is corrupt, truncated, or mismatched."""


class InvalidLabelError(ValueError):
    """A label is outside the class range or not one-hot."""


class InvalidSpecError(ValueError):
    """A synthetic-dataset specification is physically impossible."""


class StateError(RuntimeError):
    """An operation was called in the wrong mode (e.g. backward without a cache)."""
