"""Error taxonomy shared across the package.

The CLI maps these to process exit codes: config 1, data 2, numeric 3.
"""


class ConfigError(ValueError):
    """Invalid configuration (bad event intervals, unknown tracker, ...)."""


class DataError(ValueError):
    """Malformed on-disk data (annotation files, frames, checkpoints)."""


class NumericError(ArithmeticError):
    """Non-finite or otherwise unusable numeric state."""
