"""Error types shared across the package, mapped to CLI exit codes."""


class ConfigError(ValueError):
    """Invalid, unknown, or missing run-configuration value."""


class DataError(ValueError):
    """Malformed file or mutually inconsistent input data."""


class NumericError(RuntimeError):
    """A computation produced non-finite values."""
