"""Exception hierarchy shared across the package.

Exit codes used by the CLI: 1 for usage/config problems, 2 for bad data,
3 for numeric failures during optimization.
"""


class HemiError(Exception):
    exit_code = 1


class ConfigError(HemiError):
    """Bad CLI usage, config file, or run configuration."""

    exit_code = 1


class MetaPathError(ConfigError):
    """A meta-path string does not type-check against the relation signatures."""


class DataError(HemiError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class ShapeError(DataError):
    """Operands with incompatible shapes."""


class NumericError(HemiError):
    """Non-finite values encountered during optimization."""

    exit_code = 3
