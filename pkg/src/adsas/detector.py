"""The streaming pipeline: train, forecast ahead, score arriving points.

Training analyzes the history (stationarity + seasonal period), undersamples
it so the seasonal order stays small, fits a seasonal ARIMA, and spline-
interpolates a batch of forecasts back to native resolution. Each arriving
point is scored by decomposing the recent prediction errors and pushing the
newest remainder through a rolling-Gaussian CDF: values in either extreme
tail are anomalies. Only values judged normal feed back into the training
buffer (flagged observations are replaced by their predictions), and the
model is refit on a fixed cadence.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from . import sarima
from .analysis import (
    DEFAULT_PEAK_RATIO_THRESHOLD,
    DEFAULT_STATIONARITY_THRESHOLD,
    analyze,
)
from .errors import NonFiniteValueError, OutOfOrderTimestampError, TooShortError
from .series import Series, cubic_spline_interpolate, resample_mean
from .stl import StlConfig, stl


@dataclass(frozen=True)
class DetectorConfig:
    """Tunables for the streaming detector.

    ``epsilon`` is the two-sided tail mass that flags an anomaly. ``None``
    fields resolve at train time: forecast batch and refit cadence default
    to one seasonal period at native resolution, the residual window to one
    period but at least 100 points, and the sigma floor to 1e-9 times the
    training range.
    """

    epsilon: float = 0.0005
    undersample_factor: int | str = "auto"
    forecast_batch: int | None = None
    train_min_periods: int = 3
    residual_window: int | None = None
    refit_every: int | None = None
    sigma_floor: float | None = None
    stl_window_periods: int = 4
    coarse_period_target: int = 60
    stationarity_threshold: float = DEFAULT_STATIONARITY_THRESHOLD
    peak_ratio_threshold: float = DEFAULT_PEAK_RATIO_THRESHOLD
    include_flagged_residuals: bool = True

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must be in (0, 0.5), got {self.epsilon}")
        if self.undersample_factor != "auto" and (
            int(self.undersample_factor) != self.undersample_factor
            or self.undersample_factor < 1
        ):
            raise ValueError("undersample_factor must be 'auto' or a positive integer")
        for name in ("forecast_batch", "residual_window", "refit_every"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.train_min_periods < 1:
            raise ValueError("train_min_periods must be >= 1")
        if self.stl_window_periods < 2:
            raise ValueError("stl_window_periods must be >= 2")
        if self.coarse_period_target < 2:
            raise ValueError("coarse_period_target must be >= 2")


@dataclass(frozen=True)
class Verdict:
    """Per-point output of the detector.

    ``error == predicted - observed`` exactly; ``mu``/``sigma`` are the
    rolling statistics the CDF was computed against (sigma after flooring).
    """

    time: float
    observed: float
    predicted: float
    error: float
    residual: float
    cdf: float
    is_anomaly: bool
    mu: float = 0.0
    sigma: float = 0.0
    sigma_floored: bool = False

    def wire_dict(self) -> dict:
        """The serialized form: exactly the documented seven keys."""
        return {
            "t": self.time,
            "x": self.observed,
            "p": self.predicted,
            "e": self.error,
            "r": self.residual,
            "cdf": self.cdf,
            "anomaly": self.is_anomaly,
        }


def residual_cdf(r: float, mu: float, sigma: float) -> float:
    """Standard normal CDF of (r - mu) / sigma.

    Uses the platform error function, accurate to well below 1e-12
    absolute. A non-positive sigma is clamped to a tiny value rather than
    rejected, matching the detector's flooring policy.
    """
    if sigma <= 0.0:
        sigma = 1e-300
    z = (r - mu) / sigma
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def resolve_undersample_factor(
    seasonal_period: int, interval: float, target: int = 60
) -> int:
    """Pick the undersampling factor for a seasonal period.

    A period already at or below ``target`` coarse samples needs no
    undersampling. Sub-hourly data is coarsened to one-hour blocks when
    that divides the period cleanly and keeps it under the target (the
    natural choice for minute-scale feeds); otherwise the factor is the
    smallest integer whose rounded coarse period fits, which is a clean
    divisor whenever one exists at that size.
    """
    if seasonal_period <= target:
        return 1
    per_hour = 3600.0 / interval
    if per_hour > 1 and abs(per_hour - round(per_hour)) < 1e-9:
        f = int(round(per_hour))
        if seasonal_period % f == 0 and 2 <= seasonal_period // f <= target:
            return f
    for f in range(2, seasonal_period + 1):
        coarse = round(seasonal_period / f)
        if 2 <= coarse <= target:
            return f
    return seasonal_period // 2


class DetectorState:
    """Mutable state of one detector; single-writer by contract."""

    def __init__(
        self,
        config: DetectorConfig,
        interval: float,
        start_time: float,
        seasonal_period: int,
        factor: int,
        coarse_period: int,
        is_stationary: bool,
        orders: sarima.SarimaOrders,
        model: sarima.SarimaModel,
        train_values: list[float],
        sigma_floor: float,
    ):
        self.config = config
        self.interval = interval
        self.train_start_time = start_time
        self.seasonal_period = seasonal_period
        self.factor = factor
        self.coarse_period = coarse_period
        self.is_stationary = is_stationary
        self.orders = orders
        self.model = model
        self.train_values = train_values
        self.sigma_floor = sigma_floor

        period = seasonal_period
        self.forecast_batch = config.forecast_batch or period
        self.refit_every = config.refit_every or self.forecast_batch
        self.residual_window = config.residual_window or max(period, 100)
        self.stl_window = config.stl_window_periods * period
        self.stl_config = StlConfig(period=period) if period >= 2 else None

        self.error_history: deque[float] = deque(maxlen=self.stl_window)
        self.residuals: deque[float] = deque(maxlen=self.residual_window)
        self.pending: deque[float] = deque()
        self.points_since_refit = 0
        self.refit_failures = 0
        self.next_time = start_time + len(train_values) * interval

    # -- rolling statistics ------------------------------------------------

    def rolling_stats(self) -> tuple[float, float]:
        """Mean and standard deviation over the retained residuals."""
        if not self.residuals:
            return 0.0, 0.0
        arr = np.asarray(self.residuals)
        return float(arr.mean()), float(arr.std())

    # -- internals ---------------------------------------------------------

    def _buffer_series(self) -> Series:
        return Series(self.train_start_time, self.interval, np.asarray(self.train_values))

    def _coarse_series(self) -> Series:
        return resample_mean(self._buffer_series(), self.factor)

    def _residual_of_error(self, history: np.ndarray) -> float:
        """STL remainder of the newest prediction error.

        Falls back to a plain mean-offset while the history is still too
        short for a decomposition (possible right after training when the
        in-sample span is under two seasonal cycles).
        """
        if self.stl_config is not None and history.size >= 2 * self.seasonal_period:
            return float(stl(history, self.stl_config).remainder[-1])
        return float(history[-1] - history.mean())

    def _knot_times_values(self, coarse: Series, model_forecast: np.ndarray):
        """Spline knots: trailing observed coarse blocks plus forecast blocks,
        all anchored at block centers."""
        center = (self.factor - 1) / 2.0 * self.interval
        m = len(coarse)
        anchor_idx = [max(m - 2, 0), m - 1] if m >= 2 else [m - 1]
        times = [coarse.time_at(i) + center for i in anchor_idx]
        values = [float(coarse.values[i]) for i in anchor_idx]
        step = coarse.interval
        last = coarse.time_at(m - 1) + center
        times += [last + (k + 1) * step for k in range(model_forecast.size)]
        values += [float(v) for v in model_forecast]
        return np.asarray(times), np.asarray(values)

    def _make_batch(self) -> None:
        """Forecast one batch at coarse scale and interpolate it to native."""
        coarse = self._coarse_series()
        first_native = self.next_time
        last_native = first_native + (self.forecast_batch - 1) * self.interval
        center = (self.factor - 1) / 2.0 * self.interval
        last_center = coarse.end_time + center
        horizon = int(math.ceil((last_native - last_center) / coarse.interval)) + 1
        horizon = max(horizon, 1)
        forecast = sarima.forecast(self.model, horizon)
        times, values = self._knot_times_values(coarse, forecast)
        query = first_native + np.arange(self.forecast_batch) * self.interval
        native = cubic_spline_interpolate(times, values, query)
        self.pending = deque(float(v) for v in native)

    def _refit(self) -> None:
        """Refit on the updated buffer, falling back to the previous
        coefficients re-anchored on fresh data when estimation fails."""
        coarse = self._coarse_series()
        try:
            self.model = sarima.fit(coarse, self.orders)
        except Exception:  # noqa: BLE001 - persistence fallback by design
            self.refit_failures += 1
            try:
                self.model = sarima.reanchor(self.model, coarse)
            except Exception:  # noqa: BLE001
                pass  # keep the stale model verbatim
        self.points_since_refit = 0
        self._make_batch()


def train(history: Series, config: DetectorConfig | None = None) -> DetectorState:
    """Build a detector from a training prefix.

    Runs the dataset analysis, resolves the undersampling factor, selects
    and fits model orders on the coarse series, prepares the first forecast
    batch, and seeds the rolling residual statistics from the decomposed
    in-sample prediction errors. The training prefix itself yields no
    verdicts.
    """
    config = config or DetectorConfig()
    native_per_day = max(int(round(86400.0 / history.interval)), 1)
    summary = analyze(
        history,
        native_per_day,
        stationarity_threshold=config.stationarity_threshold,
        peak_ratio_threshold=config.peak_ratio_threshold,
    )
    period = max(summary.seasonal_period, 1)
    if len(history) < config.train_min_periods * period:
        raise TooShortError(
            f"history has {len(history)} points; need at least "
            f"{config.train_min_periods} seasonal cycles ({config.train_min_periods * period})"
        )
    if config.undersample_factor == "auto":
        factor = resolve_undersample_factor(
            period, history.interval, config.coarse_period_target
        )
    else:
        factor = int(config.undersample_factor)
    coarse_period = max(int(round(period / factor)), 1)
    if coarse_period < 2:
        coarse_period = 1

    coarse = resample_mean(history, factor)
    orders = sarima.select_orders(coarse, coarse_period, summary.is_stationary)
    model = sarima.fit(coarse, orders)

    value_range = float(np.ptp(history.values))
    sigma_floor = (
        config.sigma_floor if config.sigma_floor is not None else 1e-9 * max(value_range, 1.0)
    )

    state = DetectorState(
        config=config,
        interval=history.interval,
        start_time=history.start_time,
        seasonal_period=period,
        factor=factor,
        coarse_period=coarse_period,
        is_stationary=summary.is_stationary,
        orders=orders,
        model=model,
        train_values=[float(v) for v in history.values],
        sigma_floor=sigma_floor,
    )
    _seed_residual_stats(state, coarse, model)
    state._make_batch()
    return state


def _seed_residual_stats(
    state: DetectorState, coarse: Series, model: sarima.SarimaModel
) -> None:
    """Initialize error history and rolling stats from in-sample errors.

    One-step in-sample predictions at coarse scale are the observations
    minus the fitted innovations; interpolating them to native resolution
    and differencing against the raw training values reproduces exactly the
    error stream the detector will see online.
    """
    offset, resid = sarima.in_sample_residuals(model, coarse)
    if resid.size < 2:
        return
    coarse_pred = coarse.values[offset:] - resid
    center = (state.factor - 1) / 2.0 * state.interval
    knot_times = coarse.timestamps()[offset:] + center
    history = state._buffer_series()
    native_times = history.timestamps()
    inside = (native_times >= knot_times[0]) & (native_times <= knot_times[-1])
    if inside.sum() < 2:
        return
    native_pred = cubic_spline_interpolate(knot_times, coarse_pred, native_times[inside])
    errors = native_pred - history.values[inside]
    errors = errors[-state.stl_window :]
    state.error_history.extend(float(e) for e in errors)

    if state.stl_config is not None and errors.size >= 2 * state.seasonal_period:
        remainders = stl(errors, state.stl_config).remainder
    else:
        remainders = errors - errors.mean()
    for r in remainders[-state.residual_window :]:
        state.residuals.append(float(r))


def process_point(state: DetectorState, t: float, x: float) -> Verdict:
    """Score one arriving observation and update the detector.

    The error against the pending interpolated forecast joins the error
    history; its decomposition remainder is scored against the rolling
    Gaussian, the appropriate value (observation, or prediction when
    flagged) feeds the training buffer, and a refit triggers on cadence or
    when the forecast batch runs out.
    """
    if not math.isfinite(x):
        raise NonFiniteValueError(f"value at t={t} is not finite")
    if abs(t - state.next_time) > 1e-6 * state.interval:
        raise OutOfOrderTimestampError(
            f"expected timestamp {state.next_time}, got {t}"
        )
    if not state.pending:
        state._make_batch()
    p = state.pending.popleft()
    e = p - x

    state.error_history.append(e)
    history = np.asarray(state.error_history)
    r = state._residual_of_error(history)

    mu, sigma = state.rolling_stats()
    floored = sigma < state.sigma_floor
    sigma_eff = max(sigma, state.sigma_floor)
    cdf = residual_cdf(r, mu, sigma_eff)
    eps = state.config.epsilon
    is_anomaly = cdf < eps or cdf > 1.0 - eps

    if state.config.include_flagged_residuals or not is_anomaly:
        state.residuals.append(r)
    state.train_values.append(x if not is_anomaly else p)
    state.next_time += state.interval
    state.points_since_refit += 1

    verdict = Verdict(
        time=t,
        observed=float(x),
        predicted=float(p),
        error=float(e),
        residual=float(r),
        cdf=float(cdf),
        is_anomaly=bool(is_anomaly),
        mu=mu,
        sigma=float(sigma_eff),
        sigma_floored=bool(floored),
    )

    if state.points_since_refit >= state.refit_every or not state.pending:
        state._refit()
    return verdict


def detect_stream(state: DetectorState, stream: Series) -> list[Verdict]:
    """Run every point of ``stream`` through the detector, in order."""
    out = []
    times = stream.timestamps()
    for t, x in zip(times, stream.values):
        out.append(process_point(state, float(t), float(x)))
    return out


# -- state serialization (used by the CLI train/detect round trip) ---------


def state_to_dict(state: DetectorState) -> dict:
    """Snapshot a detector into a JSON-compatible dict, bit-exact floats."""
    return {
        "format": "adsas-detector/1",
        "config": asdict(state.config),
        "interval": state.interval.hex(),
        "train_start_time": state.train_start_time.hex(),
        "next_time": state.next_time.hex(),
        "seasonal_period": state.seasonal_period,
        "factor": state.factor,
        "coarse_period": state.coarse_period,
        "is_stationary": state.is_stationary,
        "sigma_floor": state.sigma_floor.hex(),
        "model": sarima.model_to_text(state.model),
        "train_values": [v.hex() for v in state.train_values],
        "error_history": [float(v).hex() for v in state.error_history],
        "residuals": [float(v).hex() for v in state.residuals],
        "pending": [float(v).hex() for v in state.pending],
        "points_since_refit": state.points_since_refit,
    }


def state_from_dict(doc: dict) -> DetectorState:
    if doc.get("format") != "adsas-detector/1":
        raise ValueError(f"unsupported detector snapshot format: {doc.get('format')!r}")
    config = DetectorConfig(**doc["config"])
    model = sarima.model_from_text(doc["model"])
    state = DetectorState(
        config=config,
        interval=float.fromhex(doc["interval"]),
        start_time=float.fromhex(doc["train_start_time"]),
        seasonal_period=doc["seasonal_period"],
        factor=doc["factor"],
        coarse_period=doc["coarse_period"],
        is_stationary=doc["is_stationary"],
        orders=model.orders,
        model=model,
        train_values=[float.fromhex(v) for v in doc["train_values"]],
        sigma_floor=float.fromhex(doc["sigma_floor"]),
    )
    state.error_history.extend(float.fromhex(v) for v in doc["error_history"])
    state.residuals.extend(float.fromhex(v) for v in doc["residuals"])
    state.pending = deque(float.fromhex(v) for v in doc["pending"])
    state.points_since_refit = doc["points_since_refit"]
    state.next_time = float.fromhex(doc["next_time"])
    return state
