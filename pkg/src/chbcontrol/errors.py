"""Shared exception types."""


class ConfigurationError(ValueError):
    """A supplied parameter violates a documented admissibility bound."""


class SourceContractViolation(RuntimeError):
    """A source was supplied outside the required factored form."""
