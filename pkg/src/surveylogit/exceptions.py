"""Exception hierarchy shared by the data, estimation and simulation layers."""


class SurveyDataError(ValueError):
    """Malformed survey input (CSV, schema, formula or allocation)."""

    def __init__(self, message, *, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class DesignWarning(UserWarning):
    """The sample does not look like a one-step stratified design."""


class EstimationError(RuntimeError):
    """Base class for failures of a model fit."""


class SingularDesignError(EstimationError):
    """The (weighted) design matrix is rank deficient."""

    def __init__(self, message, dependent_columns=()):
        self.dependent_columns = tuple(dependent_columns)
        super().__init__(message)


class ConvergenceError(EstimationError):
    """An iterative solver exhausted its budget.

    ``last_iterate`` holds the final parameter vector reached.
    """

    def __init__(self, message, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class SeparationError(EstimationError):
    """Fitted probabilities collapsed onto 0 or 1 (complete or quasi separation)."""


class VarianceError(EstimationError):
    """The design-based variance cannot be computed."""
