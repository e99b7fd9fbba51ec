"""Error taxonomy shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, NumericError -> 3.
"""


class RankforgeError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(RankforgeError):
    """Invalid configuration: bad shapes, bad hyperparameters, bad flags."""

    exit_code = 1


class DataError(RankforgeError):
    """Invalid data: malformed files, lists violating training invariants."""

    exit_code = 2


class ParseError(DataError):
    """Malformed input line; message carries the 1-based line number."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class DegenerateInputError(DataError):
    """Statistical test input with no usable variance."""


class NumericError(RankforgeError):
    """Non-finite value encountered during training or evaluation."""

    exit_code = 3
