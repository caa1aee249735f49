"""Bag-of-words loop-closure detection with autoencoder or k-means vocabularies."""

from .errors import (
    AefabmapError,
    ArgumentError,
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    IoError,
    NumericError,
    UndefinedMetric,
)

__version__ = "0.1.0"
