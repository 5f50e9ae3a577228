"""Exception types shared across the package."""
from __future__ import annotations


class ConjlabError(Exception):
    """Base class for errors raised by conjlab."""


class DimensionError(ConjlabError, ValueError):
    pass


class NumericalError(ConjlabError, ArithmeticError):
    """A computation failed for numerical reasons (blow-up, singularity, ...)."""


class BlowUpError(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SingularMatrixError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class ConfigError(ConjlabError, ValueError):
    pass
