"""Exception hierarchy shared by the solvers and the CLI."""

from __future__ import annotations


class BellmanFDError(Exception):
    """Base class for all library errors."""


class ConfigurationError(BellmanFDError, ValueError):
    """Invalid mesh, problem or solver configuration."""


class ValidationError(BellmanFDError, ValueError):
    """A problem violates a hard structural rule (sign of b, c >= lambda, ...)."""


class EvaluationError(BellmanFDError, ArithmeticError):
    """A coefficient evaluator returned a non-finite value."""


class ConvergenceError(BellmanFDError, RuntimeError):
    """An iteration hit its cap before reaching the requested tolerance."""

    def __init__(self, message: str, last_residual: float = float("nan"), slice_index: int | None = None):
        super().__init__(message)
        self.last_residual = last_residual
        self.slice_index = slice_index
