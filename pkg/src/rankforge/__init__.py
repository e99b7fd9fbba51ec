"""rankforge: a learning-to-rank toolkit built around a coarse-grained
expert-mixture listwise loss, with baseline losses, neural scorers, IR
evaluation metrics, and a deterministic training CLI.
"""

from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    NumericError,
    ParseError,
    RankforgeError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DegenerateInputError",
    "NumericError",
    "ParseError",
    "RankforgeError",
    "__version__",
]
