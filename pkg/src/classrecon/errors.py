"""Shared exception types, mapped to CLI exit codes."""


class ConfigError(Exception):
    """Invalid configuration or malformed input artifacts (exit code 2)."""


class DatasetError(ConfigError):
    """On-disk dataset failed validation."""


class PrerequisiteError(Exception):
    """A required upstream artifact is missing (exit code 3)."""


class NumericalError(Exception):
    """Non-finite values encountered during training or sampling (exit code 4)."""
