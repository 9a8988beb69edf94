"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`SDRError`,
so callers can catch the whole family at once.
"""


class SDRError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SDRError, ValueError):
    """Invalid or unresolved configuration (unknown key, bad value, ...)."""


class DataParseError(SDRError, ValueError):
    """A dataset file could not be parsed.

    ``line`` and ``column`` point at the offending cell when known.
    """

    def __init__(self, message, line=None, column=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.line = line
        self.column = column


class DegenerateProjection(SDRError, ValueError):
    """The projected covariates have zero spread."""


class EmptyWindow(SDRError, ValueError):
    """No sample point receives positive kernel weight at a query."""


class UnrecoverableFit(SDRError):
    """Too few successful smoother points to interpolate/extrapolate."""


class DegenerateFit(SDRError):
    """The optimizer ended on a sentinel (degenerate) objective value."""


class EstimatorInputError(SDRError, ValueError):
    """Inputs to an ATE estimator violate its preconditions."""


class GammaDegenerate(EstimatorInputError):
    """A covariance in the improved-AIPW weight denominator is zero."""


class JacobianFailure(SDRError):
    """A numerical Jacobian hit a non-finite evaluation."""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class VarianceFailure(SDRError):
    """An asymptotic variance could not be assembled."""


class MissingStage(SDRError, KeyError):
    """A report lacks the fitted values a consumer needs."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""
