"""Exception hierarchy shared by all sarvl modules."""


class SarvlError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SarvlError):
    """Invalid configuration value or combination."""


class ShapeError(SarvlError):
    """Array dimensions do not match the declared contract."""


class VocabularyError(SarvlError):
    """Token id outside the configured vocabulary."""


class NumericError(SarvlError):
    """Non-finite value encountered on a numeric path."""


class ContractError(SarvlError):
    """Caller violated an input contract (e.g. non-unit-norm embedding)."""


class UsageError(SarvlError):
    """Operation invoked in a state its contract forbids."""


class ScreeningError(SarvlError):
    """Segment removal left no usable text to screen."""


class DataError(SarvlError):
    """Malformed or degenerate input data."""


class GeometryError(SarvlError):
    """Geotransform is singular or otherwise unusable."""


class TemplateError(SarvlError):
    """Prompt template contains an unknown or unfillable placeholder."""


class ChainError(SarvlError):
    """A stage of the multi-scale generation chain failed."""


class CheckpointError(SarvlError):
    """Checkpoint file rejected (bad magic, version, or truncation)."""
