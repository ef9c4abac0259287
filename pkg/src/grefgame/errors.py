"""Exception taxonomy shared across the library, service, and CLI.

The CLI maps these onto distinct exit codes, the service onto HTTP
statuses, so each class marks a user-distinguishable failure kind.
"""


class GrefgameError(Exception):
    """Base class for all library errors."""


class ShapeError(GrefgameError, ValueError):
    """Tensor or layer dimensions do not line up."""


class DomainError(GrefgameError, ValueError):
    """Numeric input outside an operation's domain (e.g. log of x <= 0)."""


class ContractError(GrefgameError, ValueError):
    """An operation was called in a way its contract forbids."""


class ConfigurationError(GrefgameError, ValueError):
    """Invalid or inconsistent run configuration."""


class InfeasibleWorldError(GrefgameError, ValueError):
    """The object world cannot support the requested sampling."""


class WorldTooLargeError(InfeasibleWorldError):
    """t**p exceeds the enumeration guard."""


class DivergenceError(GrefgameError, RuntimeError):
    """Training loss became non-finite.

    Carries the partial result so callers can persist the last good
    checkpoint before surfacing the failure.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
