"""Shared exception types."""


class ValidationError(ValueError):
    """A model or config object violates its structural constraints."""


class DomainError(ValueError):
    """A kernel function was evaluated outside its domain."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""
