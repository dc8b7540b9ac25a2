"""Exception hierarchy shared by every module."""


class HybridRiskError(Exception):
    """Base class for all package errors."""


class UsageError(HybridRiskError, ValueError):
    """Invalid arguments or violated preconditions."""


class NumericError(HybridRiskError, ArithmeticError):
    """Non-finite values, blow-ups or numerically singular problems."""


class JumpSingularityError(NumericError):
    """Drift of a jump-generating state vanishes on the integration path."""


class SolverError(NumericError):
    """Linear-algebra failure in the level-chain solvers."""


class ConfigError(UsageError):
    """Schema violation in a configuration document.

    Parameters
    ----------
    message : str
        What is wrong.
    line : int, optional
        1-based line in the source document, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
