"""Subreddit comment exporter: archive fetch, tokenization and embedding."""

from .errors import (EncoderError, ExporterError, FetchError,
                     ValidationError)
from .job import ENCODERS, ExportJob

__version__ = "0.1.0"

__all__ = [
    "ENCODERS",
    "EncoderError",
    "ExportJob",
    "ExporterError",
    "FetchError",
    "ValidationError",
    "__version__",
]
