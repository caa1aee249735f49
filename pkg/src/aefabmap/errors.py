"""Exception hierarchy shared by every stage of the pipeline."""


class AefabmapError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 3


class FormatError(AefabmapError):
    """A file does not match its binary or CSV layout."""

    exit_code = 2


class IoError(AefabmapError, OSError):
    exit_code = 2


class ConfigError(AefabmapError):
    exit_code = 2


class ArgumentError(AefabmapError, ValueError):
    exit_code = 2


class DataError(AefabmapError, ValueError):
    """Values are well-formed but unusable (NaN, out of range, too few rows)."""


class DimensionError(AefabmapError, ValueError):
    pass


class UndefinedMetric(AefabmapError, ZeroDivisionError):
    """A metric whose denominator is zero."""


class NumericError(AefabmapError, ArithmeticError):
    exit_code = 4
