"""Exception types raised across the package."""


class BMEFError(Exception):
    """Base class for all package errors."""


class ShapeError(BMEFError, ValueError):
    pass


class InvalidGridError(BMEFError, ValueError):
    pass


class InvalidDegreeError(BMEFError, ValueError):
    pass


class RankDeficiencyError(BMEFError, ValueError):
    def __init__(self, dimension, message=None):
        self.dimension = dimension
        super().__init__(message or f"marginal basis for '{dimension}' is rank deficient")


class IntegrityError(BMEFError, ValueError):
    pass


class ConditionIndexError(BMEFError, IndexError):
    pass


class DomainError(BMEFError, ValueError):
    pass


class SamplerDegenerateError(BMEFError, RuntimeError):
    """Rejection sampler exhausted its attempt budget."""

    def __init__(self, message, params=None, attempts=0, context=None):
        self.params = params
        self.attempts = attempts
        self.context = dict(context or {})
        super().__init__(message)


class NumericalDivergenceError(BMEFError, FloatingPointError):
    """Non-finite or singular quantity met inside the sampler.

    ``partial_chain`` is filled in by :func:`bmef.sampler.fit` with the draws
    recorded before the failure.
    """

    def __init__(self, message, iteration=None, partial_chain=None):
        self.iteration = iteration
        self.partial_chain = partial_chain
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")


class InsufficientDrawsError(BMEFError, ValueError):
    pass


class ScenarioError(BMEFError, ValueError):
    pass


class SpecError(BMEFError, ValueError):
    pass
