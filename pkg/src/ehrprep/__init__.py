"""Cohort extraction and preprocessing for MIMIC-IV-shaped EHR tables."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, SchemaError

__all__ = ["__version__", "ConfigError", "DataError", "SchemaError"]
