"""Exception and warning types shared across the package."""


class SdecertError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SdecertError):
    """Operands with incompatible state/control dimensions."""


class ExprSyntaxError(SdecertError):
    """Expression text could not be parsed.

    Carries the byte offset of the offending token in ``offset``.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalDomainError(SdecertError):
    """Evaluation left the domain of a primitive (log of non-positive,
    division by an interval containing zero, non-finite result, ...)."""


class NonFiniteValue(SdecertError):
    """A tape node produced NaN or infinity."""


class CellBudgetExceeded(SdecertError):
    """The partition grew past the configured live-cell budget (OM)."""


class ConfigError(SdecertError):
    """Problem configuration failed validation."""


class LPInfeasible(SdecertError):
    """The scenario linear program has no feasible point."""

    def __init__(self, message: str, worst=None):
        super().__init__(message)
        self.worst = worst


class LPUnbounded(SdecertError):
    """The scenario linear program is unbounded (usually a missing
    unsafe-region sample; reported as a configuration problem)."""


class SpecValidationWarning(UserWarning):
    """Soft validation finding on a reach-avoid specification."""
