"""Exception types shared by all modules.

The split matters for the CLI (exit code 2 vs 3) and the HTTP service
(400 vs 422 vs 500), so keep the hierarchy small and stable.
"""


class DrJudgeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DrJudgeError):
    """Bad input shape, value, or parameter. CLI exit 2, HTTP 400."""


class ParameterError(ValidationError):
    """A parameter is out of its documented range."""


class DataError(ValidationError):
    """The data itself is unusable (non-finite, empty, degenerate)."""


class GraphError(DataError):
    """A neighborhood graph is disconnected or otherwise unusable."""


class UndefinedMetricError(DrJudgeError):
    """The metric's precondition fails on this input (e.g. no labels). HTTP 422."""


class NumericalError(DrJudgeError):
    """An iterative procedure failed to converge. CLI exit 3, HTTP 500."""
