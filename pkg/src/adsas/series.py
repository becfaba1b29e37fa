"""Regularly-sampled series: resampling, differencing, spline interpolation.

The :class:`Series` is the currency every other module trades in: a start
time in epoch seconds, a constant positive sampling interval, and a vector
of finite doubles. Timestamps are never stored; the timestamp of index
``i`` is always ``start_time + i * interval``, recomputed on demand so it
can never drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyInputError,
    InsufficientKnotsError,
    InvalidFactorError,
    IrregularSamplingError,
    NonFiniteValueError,
    NonMonotonicKnotsError,
    QueryOutOfRangeError,
    TooShortError,
    UnsortedTimestampsError,
)


@dataclass(frozen=True, eq=False)
class Series:
    """A regularly sampled sequence of finite real values.

    Parameters
    ----------
    start_time : float
        Epoch seconds of the first sample.
    interval : float
        Seconds between consecutive samples, strictly positive.
    values : ndarray
        Finite doubles; copied and frozen on construction.
    """

    start_time: float
    interval: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError(f"interval must be positive, got {self.interval}")
        values = np.asarray(self.values, dtype=float).copy()
        if values.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if values.size and not np.all(np.isfinite(values)):
            raise NonFiniteValueError("series values must all be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "start_time", float(self.start_time))
        object.__setattr__(self, "interval", float(self.interval))

    def __len__(self) -> int:
        return self.values.size

    @property
    def end_time(self) -> float:
        """Timestamp of the last sample."""
        return self.time_at(len(self) - 1)

    def time_at(self, i: int) -> float:
        return self.start_time + i * self.interval

    def timestamps(self) -> np.ndarray:
        """All sample timestamps, recomputed from (start_time, interval)."""
        return self.start_time + np.arange(len(self)) * self.interval

    def slice(self, start: int, stop: int | None = None) -> "Series":
        """Sub-series by index range, with start_time advanced to match."""
        stop = len(self) if stop is None else stop
        return Series(self.time_at(start), self.interval, self.values[start:stop])

    def with_values(self, values: np.ndarray) -> "Series":
        """Same time base, new values (length may differ)."""
        return Series(self.start_time, self.interval, values)


def resample_mean(s: Series, factor: int) -> Series:
    """Coarsen a series by averaging non-overlapping blocks of ``factor``.

    A trailing block shorter than ``factor`` is dropped rather than padded,
    so every output value is the mean of exactly ``factor`` inputs.
    """
    if int(factor) != factor or factor < 1:
        raise InvalidFactorError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    n = len(s)
    if n < factor:
        raise EmptyInputError(f"series has {n} values, need at least {factor}")
    m = n // factor
    coarse = s.values[: m * factor].reshape(m, factor).mean(axis=1)
    return Series(s.start_time, s.interval * factor, coarse)


def _natural_spline_second_derivatives(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second derivatives of the natural cubic spline through (t, y).

    Solves the interior tridiagonal system with the Thomas algorithm;
    the boundary second derivatives are pinned at zero.
    """
    n = t.size
    m = np.zeros(n)
    if n == 2:
        return m
    h = np.diff(t)
    # interior equations: h[i-1] M[i-1] + 2(h[i-1]+h[i]) M[i] + h[i] M[i+1] = rhs[i]
    rhs = 6.0 * (np.diff(y[1:]) / h[1:] - np.diff(y[:-1]) / h[:-1])
    diag = 2.0 * (h[:-1] + h[1:])
    lower = h[1:-1].copy()
    upper = h[1:-1].copy()
    k = n - 2
    cp = np.zeros(k)
    dp = np.zeros(k)
    cp[0] = upper[0] / diag[0] if k > 1 else 0.0
    dp[0] = rhs[0] / diag[0]
    for i in range(1, k):
        denom = diag[i] - lower[i - 1] * cp[i - 1]
        cp[i] = upper[i] / denom if i < k - 1 else 0.0
        dp[i] = (rhs[i] - lower[i - 1] * dp[i - 1]) / denom
    m[k] = dp[k - 1]
    for i in range(k - 2, -1, -1):
        m[i + 1] = dp[i] - cp[i] * m[i + 2]
    return m


def cubic_spline_interpolate(
    knot_times: np.ndarray, knot_values: np.ndarray, query_times: np.ndarray
) -> np.ndarray:
    """Evaluate the natural cubic spline through the knots at ``query_times``.

    Natural boundary conditions (zero second derivative at both ends) make
    the spline exact on affine data and reproduce each knot value exactly.
    Queries must lie within ``[knot_times[0], knot_times[-1]]``.
    """
    t = np.asarray(knot_times, dtype=float)
    y = np.asarray(knot_values, dtype=float)
    q = np.asarray(query_times, dtype=float)
    if t.size < 2:
        raise InsufficientKnotsError(f"need at least 2 knots, got {t.size}")
    if t.size != y.size:
        raise ValueError("knot_times and knot_values must have the same length")
    if np.any(np.diff(t) <= 0):
        raise NonMonotonicKnotsError("knot_times must be strictly increasing")
    if q.size and (q.min() < t[0] or q.max() > t[-1]):
        raise QueryOutOfRangeError(
            f"queries must lie within [{t[0]}, {t[-1]}]"
        )
    m = _natural_spline_second_derivatives(t, y)
    idx = np.clip(np.searchsorted(t, q, side="right") - 1, 0, t.size - 2)
    h = t[idx + 1] - t[idx]
    a = (t[idx + 1] - q) / h
    b = (q - t[idx]) / h
    return (
        a * y[idx]
        + b * y[idx + 1]
        + ((a**3 - a) * m[idx] + (b**3 - b) * m[idx + 1]) * h**2 / 6.0
    )


def difference(s: Series, d: int, D: int, seasonal_period: int) -> Series:
    """Apply ``(1 - L)^d`` then ``(1 - L^s)^D`` to a series.

    Output length shrinks by ``d + D * seasonal_period`` and the start time
    advances by the same number of sampling intervals.
    """
    if d < 0 or D < 0:
        raise ValueError("differencing orders must be non-negative")
    if seasonal_period < 1:
        raise ValueError("seasonal_period must be >= 1")
    consumed = d + D * seasonal_period
    if len(s) <= consumed:
        raise TooShortError(
            f"series of length {len(s)} cannot be differenced (d={d}, D={D}, s={seasonal_period})"
        )
    v = difference_values(s.values, d, D, seasonal_period)
    return Series(s.time_at(consumed), s.interval, v)


def difference_values(values: np.ndarray, d: int, D: int, seasonal_period: int) -> np.ndarray:
    """Differencing on a bare value array (same semantics as ``difference``)."""
    v = np.asarray(values, dtype=float)
    for _ in range(d):
        v = np.diff(v)
    for _ in range(D):
        v = v[seasonal_period:] - v[:-seasonal_period]
    return v


def regularize(
    timestamps: np.ndarray,
    values: np.ndarray,
    max_gap_intervals: int = 3,
    tolerance: float = 1e-3,
) -> Series:
    """Build a :class:`Series` from raw (timestamp, value) rows.

    The sampling interval is taken as the median spacing. Every gap must be
    an integer multiple of it (within ``tolerance`` of an interval); gaps of
    up to ``max_gap_intervals`` intervals are filled linearly, and anything
    larger or off-grid is rejected. Real-world CSVs are expected to be clean
    but occasionally drop a row; this is deliberately a narrow repair, not
    generic imputation.
    """
    t = np.asarray(timestamps, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.size != x.size:
        raise ValueError("timestamps and values must have the same length")
    if t.size < 2:
        raise TooShortError("need at least 2 samples to infer an interval")
    gaps = np.diff(t)
    if np.any(gaps <= 0):
        raise UnsortedTimestampsError("timestamps must be strictly increasing")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValueError("values must all be finite")
    interval = float(np.median(gaps))
    steps = gaps / interval
    rounded = np.rint(steps)
    if np.any(np.abs(steps - rounded) > tolerance) or np.any(rounded < 1):
        worst = int(np.argmax(np.abs(steps - rounded)))
        raise IrregularSamplingError(
            f"gap at index {worst} is {gaps[worst]:.6g}s, not a whole number of "
            f"{interval:.6g}s intervals"
        )
    if np.any(rounded > max_gap_intervals):
        worst = int(np.argmax(rounded))
        raise IrregularSamplingError(
            f"gap of {int(rounded[worst])} intervals at index {worst} exceeds the "
            f"{max_gap_intervals}-interval fill limit"
        )
    if np.all(rounded == 1):
        return Series(t[0], interval, x)
    # linear fill across the (short) gaps
    offsets = np.concatenate([[0], np.cumsum(rounded)]).astype(int)
    n = offsets[-1] + 1
    grid_t = t[0] + np.arange(n) * interval
    filled = np.interp(grid_t, t[0] + offsets * interval, x)
    filled[offsets] = x  # keep observed values bit-exact
    return Series(t[0], interval, filled)
