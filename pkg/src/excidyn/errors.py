"""Exception types shared across the package."""


class ExcidynError(Exception):
    """Base class for all errors raised by excidyn."""


class InvalidInputError(ExcidynError, ValueError):
    """An argument or configuration value violates a documented contract."""


class StepSizeError(ExcidynError, RuntimeError):
    """The requested integration step is too large for the method to be valid."""


class IntegrationError(ExcidynError, RuntimeError):
    """A deterministic integration lost accuracy (e.g. trace drift)."""
