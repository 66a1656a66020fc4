"""Exception types shared across modules."""


class ConfigurationError(ValueError):
    """An invalid configuration value or combination."""


class DataError(ValueError):
    """A study or dataset violates the data invariants; messages name the study."""
