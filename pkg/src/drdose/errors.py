"""Exception hierarchy shared across the package."""


class DrDoseError(Exception):
    """Base class for every error raised by drdose."""


class DataError(DrDoseError):
    """Malformed or unusable input data."""


class MissingColumnError(DataError):
    def __init__(self, column):
        super().__init__(f"column {column!r} not found")
        self.column = column


class NonFiniteError(DataError):
    def __init__(self, column, row, value=None):
        msg = f"non-finite or unparseable value {value!r} in column {column!r} at row {row}"
        super().__init__(msg)
        self.column = column
        self.row = row


class EmptyDataError(DataError):
    pass


class UnknownCovariateError(DataError):
    def __init__(self, name):
        super().__init__(f"unknown covariate {name!r}")
        self.name = name


class EstimationError(DrDoseError):
    """A model could not be fitted or evaluated."""


class InsufficientDataError(EstimationError):
    pass


class CollinearityError(EstimationError):
    def __init__(self, column, label=None):
        what = label if label is not None else f"index {column}"
        super().__init__(f"design matrix is rank deficient: column {what} is collinear")
        self.column = column
        self.label = label


class ZeroVarianceError(EstimationError):
    pass


class EmptyStratumError(EstimationError):
    def __init__(self, stratum):
        super().__init__(f"stratum {stratum} has no member units")
        self.stratum = stratum


class BootstrapAbort(EstimationError):
    pass
