"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`MtdidError`.
The three intermediate classes map onto the CLI exit codes (config 1, data 2,
estimation 3).
"""


class MtdidError(Exception):
    """Base class for all package errors."""


class ConfigError(MtdidError):
    """Invalid run or generator configuration."""


class DataError(MtdidError):
    """Input data violates a structural requirement."""


class SchemaError(DataError):
    """A required column could not be resolved."""


class EmptyDatasetError(DataError):
    """Nothing is left after filtering."""


class UnusableControlError(DataError):
    """No never-treated units are available as a comparison group."""


class InsufficientDataError(DataError):
    """Too few units on one side of a comparison."""


class CoverageError(DataError):
    """A selection model does not cover every retained unit."""


class DimensionError(DataError):
    """Covariate layout is incompatible with the requested operation."""


class EstimationError(MtdidError):
    """A numerical estimation step could not be completed."""


class SingularDesignError(EstimationError):
    def __init__(self, column: int, message: str | None = None):
        self.column = column
        super().__init__(message or f"design matrix is rank deficient at column {column}")


class SeparationError(EstimationError):
    """Probit likelihood has no finite maximiser."""


class EmptyCohortError(EstimationError):
    """A cohort has no treated units for the requested mask."""


class InsufficientControlsError(EstimationError):
    """Too few control units to fit the regression adjustment."""


class NoEstimatesError(EstimationError):
    """Every cohort was skipped."""


class EmptyAggregationError(EstimationError):
    """No cells satisfy the aggregation's selection rule."""


class PairingError(EstimationError):
    """Inputs to a triple difference do not line up."""


class CollinearTreatmentError(EstimationError):
    """Treatment indicators have no variation left after the within transform."""


class UnstableBootstrapError(EstimationError):
    """Too many bootstrap draws failed."""
