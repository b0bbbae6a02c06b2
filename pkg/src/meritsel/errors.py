"""Exception hierarchy shared by all modules."""


class MeritselError(Exception):
    """Base class for package errors."""


class DimensionError(MeritselError, ValueError):
    """Array shapes disagree with the population size or outcome width."""


class ModelError(MeritselError, ValueError):
    """An outcome model is malformed (e.g. probabilities do not sum to one)."""


class CapacityError(MeritselError):
    """Exact enumeration was requested for a population that is too large."""


class ArgumentError(MeritselError, ValueError):
    """Invalid argument combination."""


class DivergenceError(MeritselError, ArithmeticError):
    """An optimizer produced a non-finite gradient.

    The partial training trace is available as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
