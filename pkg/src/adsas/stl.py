"""Seasonal-trend decomposition by iterated local regression.

Splits a series additively into trend + seasonal + remainder using the
classic inner/outer loop: cycle-subseries smoothing, a triple-moving-average
low-pass filter, and loess trend smoothing, optionally wrapped in robustness
iterations that downweight outliers with bisquare weights. The remainder is
what the detector thresholds, so this module is on the per-point hot path;
the grid variant of loess is written to run as a handful of vectorized
passes rather than a Python loop per window.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import SingularLocalFitError, TooShortError, WindowTooSmallError

PERIODIC = "periodic"


@dataclass(frozen=True)
class StlConfig:
    """Decomposition parameters.

    ``seasonal_window`` is either an odd integer (loess window across the
    cycle-subseries) or ``"periodic"``, which collapses each cycle-subseries
    to its weighted mean — the right choice when the seasonal shape is
    stable. Window defaults follow the usual guidance: low-pass window is
    the next odd number >= period, trend window the next odd number
    >= 1.5 * period / (1 - 1.5 / seasonal_window), with the periodic case
    taken as the limit 1.5 * period.
    """

    period: int
    seasonal_window: int | str = PERIODIC
    trend_window: int | None = None
    low_pass_window: int | None = None
    inner_iterations: int = 2
    robust_iterations: int = 1

    def __post_init__(self):
        if self.period < 2:
            raise ValueError(f"period must be >= 2, got {self.period}")
        if self.seasonal_window != PERIODIC:
            _check_odd_window("seasonal_window", self.seasonal_window)
        if self.trend_window is not None:
            _check_odd_window("trend_window", self.trend_window)
        if self.low_pass_window is not None:
            _check_odd_window("low_pass_window", self.low_pass_window)
        if self.inner_iterations < 1:
            raise ValueError("inner_iterations must be >= 1")
        if self.robust_iterations < 0:
            raise ValueError("robust_iterations must be >= 0")

    def resolved_trend_window(self) -> int:
        if self.trend_window is not None:
            return self.trend_window
        if self.seasonal_window == PERIODIC:
            target = 1.5 * self.period
        else:
            target = 1.5 * self.period / (1.0 - 1.5 / self.seasonal_window)
        return _next_odd(target)

    def resolved_low_pass_window(self) -> int:
        if self.low_pass_window is not None:
            return self.low_pass_window
        return _next_odd(self.period)


@dataclass(frozen=True)
class StlDecomposition:
    """Additive triple; ``trend + seasonal + remainder`` equals the input."""

    trend: np.ndarray
    seasonal: np.ndarray
    remainder: np.ndarray


def _next_odd(x: float) -> int:
    k = max(int(np.ceil(x)), 3)
    return k if k % 2 == 1 else k + 1


def _check_odd_window(name: str, value) -> None:
    if not isinstance(value, (int, np.integer)) or value < 3 or value % 2 == 0:
        raise ValueError(f"{name} must be an odd integer >= 3, got {value!r}")


def _tricube(u: np.ndarray) -> np.ndarray:
    u = np.clip(np.abs(u), 0.0, 1.0)
    return (1.0 - u**3) ** 3


def _fit_from_moments(s: np.ndarray, t: np.ndarray, degree: int) -> np.ndarray:
    """Value at the window origin of the weighted polynomial fit.

    ``s[m]`` and ``t[m]`` hold the weight moments sum(w * d^m) and
    sum(w * d^m * y) with ``d`` the scaled offsets; ``s``/``t`` may carry
    leading batch dimensions. The offsets are centred on the evaluation
    point, so the fitted value is just the constant coefficient.
    """
    s0 = s[0]
    scale = np.maximum(np.abs(s0), 1e-300)
    if degree == 0:
        det = s0
        num = t[0]
    elif degree == 1:
        det = s[0] * s[2] - s[1] ** 2
        num = s[2] * t[0] - s[1] * t[1]
        scale = scale**2
    else:
        m11 = s[2] * s[4] - s[3] ** 2
        m12 = s[1] * s[4] - s[2] * s[3]
        m13 = s[1] * s[3] - s[2] ** 2
        det = s[0] * m11 - s[1] * m12 + s[2] * m13
        num = t[0] * m11 - s[1] * (t[1] * s[4] - t[2] * s[3]) + s[2] * (t[1] * s[3] - t[2] * s[2])
        scale = scale**3
    bad = np.abs(det) <= 1e-12 * scale
    if np.any(bad):
        raise SingularLocalFitError(
            "local fit is singular: weight mass covers too few distinct points"
        )
    return num / det


def loess_smooth(
    x: np.ndarray,
    y: np.ndarray,
    window: int,
    degree: int = 1,
    robustness_weights: np.ndarray | None = None,
) -> np.ndarray:
    """Locally weighted polynomial smoothing evaluated at every data point.

    For each point the ``window`` nearest neighbours (a contiguous run,
    since ``x`` is sorted) are fit with a degree-``degree`` polynomial under
    tricube distance weights, multiplied by ``robustness_weights`` when
    given; the smoothed value is the fit at that point. Windows larger than
    the series widen the tricube bandwidth by ``window / n`` in the usual
    way. Endpoints are smoothed with their one-sided neighbourhoods.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if y.size != n:
        raise ValueError("x and y must have the same length")
    if degree not in (0, 1, 2):
        raise ValueError(f"degree must be 0, 1 or 2, got {degree}")
    if window < degree + 1:
        raise WindowTooSmallError(
            f"window {window} cannot support a degree-{degree} fit"
        )
    if np.any(np.diff(x) <= 0):
        raise ValueError("x must be strictly increasing")
    rob = None
    if robustness_weights is not None:
        rob = np.asarray(robustness_weights, dtype=float)
        if rob.size != n:
            raise ValueError("robustness_weights must match the data length")

    q = min(window, n)
    starts = np.empty(n, dtype=int)
    lo = 0
    for i in range(n):
        while lo + q < n and (x[lo + q] - x[i]) < (x[i] - x[lo]):
            lo += 1
        starts[i] = lo

    idx = starts[:, None] + np.arange(q)[None, :]
    d = x[idx] - x[:, None]
    lam = np.abs(d).max(axis=1)
    if window > n:
        lam = lam * (window / n)
    lam = np.maximum(lam, 1e-300)
    dd = d / lam[:, None]
    w = _tricube(dd)
    if rob is not None:
        w = w * rob[idx]
    support = (w > 0).sum(axis=1)
    if np.any(support < degree + 1):
        raise SingularLocalFitError(
            "local fit is singular: weight mass covers too few distinct points"
        )
    yw = y[idx]
    s = np.stack([(w * dd**m).sum(axis=1) for m in range(2 * degree + 1)])
    t = np.stack([(w * dd**m * yw).sum(axis=1) for m in range(degree + 1)])
    return _fit_from_moments(s, t, degree)


@lru_cache(maxsize=128)
def _grid_operator(q: int, degree: int, extend: int):
    """Linear smoother pieces for unweighted grid loess with window ``q < n``.

    Returns ``(kernel, w_left, w_right)`` where ``kernel`` maps interior
    windows to fits via correlation and the boundary matrices map the first
    and last window (including ``extend`` off-grid evaluation rows) to fits.
    Cached because the detector calls loess with identical geometry on
    every streamed point.
    """
    h = (q - 1) // 2

    def row(offsets: np.ndarray, lam: float) -> np.ndarray:
        dd = offsets / lam
        w = _tricube(dd)
        X = np.vander(dd, degree + 1, increasing=True)
        M = (X.T * w) @ X
        rhs = np.linalg.solve(M, (X.T * w))
        return rhs[0]

    j = np.arange(q, dtype=float)
    kernel = row(j - h, float(max(h, 1)))
    left = [row(j + e, float(q - 1 + e)) for e in range(extend, 0, -1)]
    left += [row(j - i, float(q - 1 - i)) for i in range(h)]
    right = [row(j - (q - 1) + i, float(q - 1 - i)) for i in range(h - 1, -1, -1)]
    right += [row(j - (q - 1) - e, float(q - 1 + e)) for e in range(1, extend + 1)]
    w_left = np.array(left) if left else np.empty((0, q))
    w_right = np.array(right) if right else np.empty((0, q))
    return kernel, w_left, w_right


def _grid_rows(i_eval: np.ndarray, start: int, q: int, y: np.ndarray,
               rob: np.ndarray, degree: int, lam_scale: float) -> np.ndarray:
    """Individually weighted fits for a batch of eval positions sharing one window."""
    j = np.arange(start, start + q, dtype=float)
    d = j[None, :] - i_eval[:, None]
    lam = np.maximum(np.abs(d).max(axis=1) * lam_scale, 1e-300)
    dd = d / lam[:, None]
    w = _tricube(dd) * rob[None, start : start + q]
    yw = y[None, start : start + q]
    s = np.stack([(w * dd**m).sum(axis=1) for m in range(2 * degree + 1)])
    t = np.stack([(w * dd**m * yw).sum(axis=1) for m in range(degree + 1)])
    return _fit_from_moments(s, t, degree)


def _loess_grid(
    y: np.ndarray,
    window: int,
    degree: int = 1,
    rob: np.ndarray | None = None,
    extend: int = 0,
) -> np.ndarray:
    """Loess on the implicit grid x = 0..n-1, optionally evaluated
    ``extend`` positions beyond each end.

    Equivalent to :func:`loess_smooth` on ``arange(n)`` (verified in tests)
    but organised as correlations over fixed windows so the per-point
    streaming cost stays low.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    if degree not in (0, 1, 2):
        raise ValueError(f"degree must be 0, 1 or 2, got {degree}")
    if window < degree + 1:
        raise WindowTooSmallError(f"window {window} cannot support degree {degree}")

    if window >= n:
        # one window spans everything; bandwidth widens by window / n
        if rob is None:
            rob = np.ones(n)
        lam_scale = window / n if window > n else 1.0
        i_eval = np.arange(-extend, n + extend, dtype=float)
        return _grid_rows(i_eval, 0, n, y, rob, degree, lam_scale)

    q = window if window % 2 == 1 else window - 1
    if q < 3:
        raise WindowTooSmallError("grid loess needs an effective window of >= 3")
    h = (q - 1) // 2

    if rob is None:
        kernel, w_left, w_right = _grid_operator(q, degree, extend)
        interior = np.correlate(y, kernel, mode="valid")  # eval h .. n-1-h
        head = w_left @ y[:q]
        tail = w_right @ y[-q:]
        return np.concatenate([head, interior, tail])

    if (rob > 0).sum() < degree + 1:
        raise SingularLocalFitError(
            "local fit is singular: weight mass covers too few distinct points"
        )

    # interior via correlations: one kernel per moment order
    j = np.arange(q, dtype=float)
    dd0 = (j - h) / max(h, 1)
    tric = _tricube(dd0)
    ry = rob * y
    s = np.stack(
        [np.correlate(rob, tric * dd0**m, mode="valid") for m in range(2 * degree + 1)]
    )
    t = np.stack(
        [np.correlate(ry, tric * dd0**m, mode="valid") for m in range(degree + 1)]
    )
    interior = _fit_from_moments(s, t, degree)

    head = _grid_rows(np.arange(-extend, h, dtype=float), 0, q, y, rob, degree, 1.0)
    tail = _grid_rows(
        np.arange(n - h, n + extend, dtype=float), n - q, q, y, rob, degree, 1.0
    )
    return np.concatenate([head, interior, tail])


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    return np.convolve(x, np.full(width, 1.0 / width), mode="valid")


def _cycle_subseries(
    detrended: np.ndarray,
    period: int,
    seasonal_window: int | str,
    rob: np.ndarray | None,
) -> np.ndarray:
    """Smooth each cycle-subseries and extend one cycle at both ends.

    Returns an array of length ``n + 2 * period`` whose middle block aligns
    with the input.
    """
    n = detrended.size
    out = np.empty(n + 2 * period)
    if seasonal_window == PERIODIC:
        if rob is None:
            sums = np.bincount(np.arange(n) % period, weights=detrended, minlength=period)
            counts = np.bincount(np.arange(n) % period, minlength=period).astype(float)
            means = sums / counts
        else:
            phases = np.arange(n) % period
            wsum = np.bincount(phases, weights=rob, minlength=period)
            vsum = np.bincount(phases, weights=rob * detrended, minlength=period)
            plain = np.bincount(phases, weights=detrended, minlength=period)
            counts = np.bincount(phases, minlength=period).astype(float)
            means = np.where(wsum > 0, vsum / np.maximum(wsum, 1e-300), plain / counts)
        idx = (np.arange(-period, n + period)) % period
        out[:] = means[idx]
        return out

    for phase in range(period):
        sub = detrended[phase::period]
        sub_rob = rob[phase::period] if rob is not None else None
        smoothed = _loess_grid(sub, seasonal_window, degree=1, rob=sub_rob, extend=1)
        # smoothed covers cycle positions -1 .. len(sub); scatter back
        positions = np.arange(-1, sub.size + 1) * period + phase + period
        out[positions] = smoothed
    return out


def stl(series_values: np.ndarray, config: StlConfig) -> StlDecomposition:
    """Decompose values into trend + seasonal + remainder.

    Runs ``inner_iterations`` passes of cycle-subseries smoothing, low-pass
    filtering and trend smoothing, wrapped in ``robust_iterations`` outer
    passes that recompute bisquare robustness weights from the remainder.
    The returned components sum to the input exactly (the remainder is
    computed as the residual).
    """
    y = np.asarray(series_values, dtype=float)
    n = y.size
    period = config.period
    if n < 2 * period:
        raise TooShortError(
            f"need at least 2 periods ({2 * period} points), got {n}"
        )
    n_t = min(config.resolved_trend_window(), n if n % 2 == 1 else n - 1)
    n_t = max(n_t, 3)
    n_l = config.resolved_low_pass_window()

    trend = np.zeros(n)
    seasonal = np.zeros(n)
    rob = None
    for outer in range(config.robust_iterations + 1):
        for _ in range(config.inner_iterations):
            detrended = y - trend
            cycles = _cycle_subseries(detrended, period, config.seasonal_window, rob)
            low = _moving_average(
                _moving_average(_moving_average(cycles, period), period), 3
            )
            low = _loess_grid(low, n_l, degree=1, rob=None)
            seasonal = cycles[period : period + n] - low
            trend = _loess_grid(y - seasonal, n_t, degree=1, rob=rob)
        if outer < config.robust_iterations:
            residual = y - trend - seasonal
            rob = _bisquare_weights(residual)
    return StlDecomposition(trend=trend, seasonal=seasonal, remainder=y - trend - seasonal)


def _bisquare_weights(residual: np.ndarray) -> np.ndarray:
    """Robustness weights: bisquare of |r| scaled by six times the median.

    A flat remainder (all |r| at numerical noise) would zero out every
    weight, so that case degrades to uniform weights instead.
    """
    a = np.abs(residual)
    h = 6.0 * np.median(a)
    if h <= 1e-12 * max(a.max(), 1.0):
        return np.ones_like(a)
    u = np.clip(a / h, 0.0, 1.0)
    return (1.0 - u**2) ** 2
