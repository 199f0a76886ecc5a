"""Exception types shared across the package."""


class GeomganError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GeomganError):
    """Operands have incompatible shapes. Message names both shapes."""


class ConfigError(GeomganError):
    """Invalid configuration value or unusable argument combination."""


class DegenerateWeightsError(GeomganError):
    """Sample weights are all zero (or otherwise unusable) for a weighted mean."""


class ContractError(GeomganError):
    """An operation was called outside its documented contract."""


class DivergenceError(GeomganError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, epoch=None, parameter=None):
        super().__init__(message)
        self.epoch = epoch
        self.parameter = parameter


class FormatError(GeomganError):
    """A persisted artifact (model file, IDX file, CSV) is malformed."""


class UnsupportedVersionError(FormatError):
    """A persisted artifact declares a format version this build cannot read."""
