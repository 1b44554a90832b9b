"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Missing, unreadable or malformed input data."""
