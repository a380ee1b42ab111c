"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class AitSahaliaError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(AitSahaliaError, ValueError):
    """Argument outside the domain where a coefficient is defined."""


class InvalidParameterError(AitSahaliaError, ValueError):
    """Model, jump or correction parameters violate their invariants."""


class NumericOverflowError(AitSahaliaError, ArithmeticError):
    """A scheme produced a non-finite value."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step

    def __reduce__(self):
        return (type(self), (str(self), self.step))


class NoConvergenceError(AitSahaliaError, ArithmeticError):
    """The implicit solver exhausted its iteration budget."""


class BracketError(AitSahaliaError, ArithmeticError):
    """No sign change of the implicit residual inside the search interval."""


class DivisibilityError(AitSahaliaError, ValueError):
    """A coarsening factor or step size does not divide the fine grid."""


class DegenerateFitError(AitSahaliaError, ValueError):
    """Too few points, or non-positive errors, for a log-log fit."""


class SimulationError(AitSahaliaError, RuntimeError):
    """A path failed inside an experiment; carries the path index."""

    def __init__(self, message: str, path_index: int, cause: Exception | None = None):
        super().__init__(message)
        self.path_index = path_index
        self.cause = cause

    def __reduce__(self):
        return (type(self), (str(self), self.path_index, self.cause))


class ConfigError(AitSahaliaError, ValueError):
    """Bad configuration file or command-line override."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line

    def __str__(self) -> str:
        msg = super().__str__()
        where = []
        if self.field:
            where.append(f"field '{self.field}'")
        if self.line is not None:
            where.append(f"line {self.line}")
        return f"{msg} ({', '.join(where)})" if where else msg
