"""Exception hierarchy shared across the package."""


class MatchVarError(Exception):
    """Base class for all package errors."""


class SchemaError(MatchVarError):
    """A mapped column is missing from the input file."""


class ParseError(MatchVarError):
    """A cell could not be parsed as a number."""


class ValidationError(MatchVarError):
    """Input data violates a Dataset invariant."""


class ParameterError(MatchVarError, ValueError):
    """An argument is outside its admissible range."""


class EstimationError(MatchVarError):
    """The requested estimate cannot be formed from the given inputs."""


class FittingError(EstimationError):
    """A regression model could not be fit."""


class InfeasibleError(EstimationError):
    """A constrained weighting problem has no feasible point.

    ``min_imbalance`` holds the smallest achievable worst-case imbalance,
    which is the smallest tolerance that would make the problem feasible.
    """

    def __init__(self, message, min_imbalance=None):
        super().__init__(message)
        self.min_imbalance = min_imbalance
