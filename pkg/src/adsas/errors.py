"""Exception types raised by the detection pipeline.

Every error that a caller may reasonably want to catch separately gets its
own class; all inherit from :class:`AdsasError` so broad handlers can catch
everything coming out of this package with one clause.
"""


class AdsasError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInputError(AdsasError, ValueError):
    """An operation received fewer values than it can consume."""


class InvalidFactorError(AdsasError, ValueError):
    """Resampling factor is not a positive integer."""


class InsufficientKnotsError(AdsasError, ValueError):
    """Spline interpolation needs at least two knots."""


class NonMonotonicKnotsError(AdsasError, ValueError):
    """Spline knot abscissae must be strictly increasing."""


class QueryOutOfRangeError(AdsasError, ValueError):
    """Spline query point lies outside the knot span."""


class TooShortError(AdsasError, ValueError):
    """Series is too short for the requested operation."""


class DegenerateSeriesError(AdsasError, ValueError):
    """Series is constant; the regression or fit would be singular."""


class DegenerateAfterDifferencingError(AdsasError, ValueError):
    """Series became constant after differencing; nothing left to model."""


class WindowTooSmallError(AdsasError, ValueError):
    """Loess window cannot support the requested polynomial degree."""


class SingularLocalFitError(AdsasError, ValueError):
    """Local weight mass covers fewer distinct points than the fit needs."""


class AllFitsFailedError(AdsasError, RuntimeError):
    """Every candidate model in an order search raised an error."""


class OutOfOrderTimestampError(AdsasError, ValueError):
    """A streamed point did not arrive at the next expected timestamp."""


class NonFiniteValueError(AdsasError, ValueError):
    """A streamed or ingested value is NaN or infinite."""


class IrregularSamplingError(AdsasError, ValueError):
    """Timestamps do not sit on a regular grid (or a gap is too large)."""


class UnsortedTimestampsError(AdsasError, ValueError):
    """Input timestamps are not strictly increasing."""


class ParseError(AdsasError, ValueError):
    """A data file could not be parsed.

    ``line`` carries the 1-based line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownLabelTimestampError(AdsasError, ValueError):
    """A label timestamp falls outside the extent of its dataset."""


class LabelOutOfRangeError(AdsasError, ValueError):
    """An anomaly label lies outside the evaluated series extent."""


class SpecOutOfRangeError(AdsasError, ValueError):
    """A synthetic-data spec places an anomaly outside the series extent."""
