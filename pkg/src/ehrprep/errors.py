class ConfigError(ValueError):
    """Invalid pipeline configuration (CLI exit code 1)."""


class DataError(RuntimeError):
    """Input data cannot be processed (CLI exit code 2)."""


class SchemaError(DataError):
    """A table is missing a required column."""
