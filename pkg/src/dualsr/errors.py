"""Exception types shared across the toolkit.

ConfigurationError maps to CLI exit code 2, NumericError to exit code 3.
"""


class DualsrError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(DualsrError):
    """Bad shapes, bad geometry, bad config files or unknown keys."""


class NumericError(DualsrError):
    """Non-finite values produced during forward, backward or optimization."""
