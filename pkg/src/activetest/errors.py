"""Exception hierarchy shared across the package."""


class ActiveTestError(Exception):
    """Base class for all package errors."""


class ParseError(ActiveTestError):
    """A dataset file failed to parse; message names the offending line or id."""


class VettingError(ActiveTestError):
    """Illegal vetting transition, e.g. vetting an already-vetted item."""


class MetricError(ActiveTestError):
    """A metric is undefined or was called outside its preconditions."""


class NotApplicable(ActiveTestError):
    """Signal that an estimator produces no value yet (distinct from 0)."""


class EstimatorError(ActiveTestError):
    """Estimator fitting or evaluation contract violation."""


class StrategyError(ActiveTestError):
    """Vetting strategy contract violation."""


class ConfigError(ActiveTestError):
    """Invalid run configuration or experiment manifest."""
