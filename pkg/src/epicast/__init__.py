"""Epidemic signal mining from social-media posts.

Embedding-space density clusters become daily count features that feed a
threshold classifier and multivariate caseload forecasters, with built-in
significance testing and a deterministic end-to-end pipeline.
"""

from .errors import (CoverageError, DimensionError, EpicastError, ParseError,
                     ValidationError)

__version__ = "0.1.0"

__all__ = [
    "EpicastError",
    "ParseError",
    "ValidationError",
    "DimensionError",
    "CoverageError",
    "__version__",
]
