"""Exception hierarchy shared by all modules."""


class MMStratError(Exception):
    """Base class for package errors."""


class ConfigError(MMStratError):
    """Malformed configuration: unknown form id, bad dimensions, missing keys."""


class AssumptionViolation(MMStratError):
    """A model fails one of the standing assumptions.

    Attributes:
        assumption: label such as ``"B' (b4')"``.
        where: human readable location (grid time, factor state, security).
    """

    def __init__(self, assumption: str, message: str, where: str = ""):
        self.assumption = assumption
        self.where = where
        text = f"Assumption {assumption} violated: {message}"
        if where:
            text += f" (at {where})"
        super().__init__(text)


class NumericalError(MMStratError):
    """A solver failed: denominator guard, loss of definiteness, overflow."""
