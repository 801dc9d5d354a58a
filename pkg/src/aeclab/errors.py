"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """An invalid or inconsistent configuration value."""
