"""Exception types raised by the library."""


class LtemError(Exception):
    pass


class DomainError(LtemError, ValueError):
    """A state left the positive cone (or is not finite) where that is not allowed."""


class ConfigurationError(LtemError, ValueError):
    """Inconsistent model, policy or experiment settings."""


class ExponentOverflowError(LtemError, OverflowError):
    """A log-state component exceeded the safe exponent bound."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
