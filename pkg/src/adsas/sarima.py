"""Seasonal ARIMA fitting by conditional sum of squares, plus forecasting.

The model is the multiplicative (p,d,q)(P,D,Q)_s form: after ``d`` ordinary
and ``D`` seasonal differences, the series follows an ARMA whose AR and MA
polynomials are products of a non-seasonal and a seasonal factor.
Estimation is deliberately lightweight: a Hannan-Rissanen least-squares
initialization followed by simplex minimization of the conditional sum of
squared one-step errors, with candidate coefficients kept stationary and
invertible by reflecting offending polynomial roots across the unit circle.
This trades the exactness of a state-space likelihood for speed at the
coarse resolution the detector fits on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .errors import (
    AllFitsFailedError,
    DegenerateAfterDifferencingError,
    TooShortError,
)
from .series import Series, difference_values


@dataclass(frozen=True)
class SarimaOrders:
    """Model orders (p, d, q)(P, D, Q) with seasonal period ``s``.

    ``s = 1`` means no seasonal component, in which case P, D and Q must
    all be zero.
    """

    p: int
    d: int
    q: int
    P: int = 0
    D: int = 0
    Q: int = 0
    s: int = 1

    def __post_init__(self):
        for name in ("p", "d", "q", "P", "D", "Q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.d > 2:
            raise ValueError("d must be at most 2")
        if self.D > 1:
            raise ValueError("D must be at most 1")
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if self.s == 1 and (self.P or self.D or self.Q):
            raise ValueError("seasonal orders require s > 1")

    @property
    def k_params(self) -> int:
        return self.p + self.q + self.P + self.Q

    @property
    def ar_span(self) -> int:
        """Largest lag of the expanded AR polynomial."""
        return self.p + self.s * self.P

    @property
    def ma_span(self) -> int:
        """Largest lag of the expanded MA polynomial."""
        return self.q + self.s * self.Q

    def label(self) -> str:
        return f"({self.p},{self.d},{self.q})({self.P},{self.D},{self.Q})_{self.s}"


@dataclass(frozen=True)
class SarimaModel:
    """A fitted model: orders, coefficients, and the state needed to forecast.

    ``train_tail`` keeps the last raw observations (enough to rebuild every
    lag the recursion touches after differencing) and ``resid_tail`` the
    final one-step residuals, so forecasting needs nothing but this object.
    """

    orders: SarimaOrders
    ar_coeffs: np.ndarray
    ma_coeffs: np.ndarray
    seasonal_ar: np.ndarray
    seasonal_ma: np.ndarray
    intercept: float
    innovation_variance: float
    train_tail: np.ndarray
    aic: float
    resid_tail: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: bool = True
    css: float = float("nan")
    css_init: float = float("nan")

    def __post_init__(self):
        for name in ("ar_coeffs", "ma_coeffs", "seasonal_ar", "seasonal_ma",
                     "train_tail", "resid_tail"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.innovation_variance <= 0:
            raise ValueError("innovation_variance must be positive")


def tail_length(orders: SarimaOrders) -> int:
    """Raw observations a model must retain to run its forecast recursion."""
    return max(orders.ar_span, orders.ma_span, 1) + orders.d + orders.s * orders.D


def _expand_poly(coeffs: np.ndarray, seasonal: np.ndarray, s: int, sign: float) -> np.ndarray:
    """Expand (1 + sign*sum c_i L^i)(1 + sign*sum C_j L^(js)) into lag weights.

    Returns the coefficients on lags 1..span of the product polynomial,
    *excluding* the leading 1, with the same sign convention as the inputs
    (AR uses sign=-1, MA uses sign=+1).
    """
    a = np.concatenate([[1.0], sign * np.asarray(coeffs, dtype=float)])
    b = np.zeros(s * len(seasonal) + 1)
    b[0] = 1.0
    for j, c in enumerate(np.asarray(seasonal, dtype=float), start=1):
        b[j * s] = sign * c
    full = np.convolve(a, b)
    return full[1:]


_ROOT_MARGIN = 1.001


def _reflect_roots(coeffs: np.ndarray) -> np.ndarray:
    """Force the polynomial 1 - sum c_i z^i to have roots outside the unit circle.

    Roots on or inside the circle are reflected to their conjugate inverse
    (nudged off the boundary), and the polynomial is rebuilt with its
    constant term renormalized to one. Coefficients already valid are
    returned unchanged. Degrees one and two (all the default order grid
    uses) are handled analytically; higher degrees fall back to numeric
    root finding.
    """
    c = np.asarray(coeffs, dtype=float)
    if c.size == 0 or not np.any(c):
        return c
    if c.size == 1:
        # single root at 1/c1
        c1 = c[0]
        if abs(c1) < 1.0 / _ROOT_MARGIN:
            return c
        return np.array([math.copysign(1.0 / _ROOT_MARGIN, c1)])
    if c.size == 2:
        c1, c2 = c
        # stationarity triangle for 1 - c1 z - c2 z^2
        if c1 + c2 < 1.0 - 1e-9 and c2 - c1 < 1.0 - 1e-9 and abs(c2) < 1.0 - 1e-9:
            return c
        if c2 == 0.0:
            return np.array([_reflect_roots(c[:1])[0], 0.0])
        disc = c1 * c1 + 4.0 * c2
        if disc >= 0.0:
            # two real roots of 1 - c1 z - c2 z^2
            roots = np.array([
                (c1 + math.sqrt(disc)) / (-2.0 * c2),
                (c1 - math.sqrt(disc)) / (-2.0 * c2),
            ])
            for i in range(2):
                if abs(roots[i]) <= 1.0:
                    reflected = 1.0 / max(abs(roots[i]), 1e-12)
                    roots[i] = math.copysign(max(reflected, _ROOT_MARGIN), roots[i] if roots[i] != 0 else 1.0)
            inv1, inv2 = 1.0 / roots[0], 1.0 / roots[1]
            return np.array([inv1 + inv2, -inv1 * inv2])
        # complex conjugate pair with squared modulus -1/c2: reflect the
        # pair (r -> 1/conj(r)) and push it off the boundary if needed
        rho2 = -1.0 / c2
        if rho2 > 1.0:
            return c
        c1n, c2n = c1 * rho2, c2 * rho2 * rho2
        new_rho2 = -1.0 / c2n
        if new_rho2 < _ROOT_MARGIN**2:
            m2 = _ROOT_MARGIN**2 / new_rho2
            c1n /= math.sqrt(m2)
            c2n /= m2
        return np.array([c1n, c2n])
    poly = np.concatenate([[1.0], -c])  # coefficients in increasing power of z
    trimmed = np.trim_zeros(poly, "b")
    roots = np.roots(trimmed[::-1])
    mod = np.abs(roots)
    if np.all(mod > 1.0):
        return c
    fixed = np.where(mod <= 1.0, 1.0 / np.conj(np.where(roots == 0, 1.0, roots)), roots)
    fixed_mod = np.abs(fixed)
    fixed = np.where(fixed_mod <= 1.0, fixed * (_ROOT_MARGIN / np.maximum(fixed_mod, 1e-12)), fixed)
    rebuilt = np.poly(fixed)[::-1].real  # increasing powers right-to-left
    rebuilt = rebuilt / rebuilt[0]
    out = -rebuilt[1:]
    if out.size < c.size:
        out = np.concatenate([out, np.zeros(c.size - out.size)])
    return out


def _roots_outside(coeffs: np.ndarray) -> bool:
    c = np.asarray(coeffs, dtype=float)
    if c.size == 0 or not np.any(c):
        return True
    poly = np.trim_zeros(np.concatenate([[1.0], -c]), "b")
    return bool(np.all(np.abs(np.roots(poly[::-1])) > 1.0))


def _split_params(theta: np.ndarray, orders: SarimaOrders):
    p, q, P, Q = orders.p, orders.q, orders.P, orders.Q
    ar = theta[:p]
    ma = theta[p : p + q]
    sar = theta[p + q : p + q + P]
    sma = theta[p + q + P :]
    return ar, ma, sar, sma


def _repair(theta: np.ndarray, orders: SarimaOrders) -> np.ndarray:
    ar, ma, sar, sma = _split_params(theta, orders)
    # MA sign convention: invertibility concerns 1 + sum theta_i z^i
    return np.concatenate([
        _reflect_roots(ar),
        -_reflect_roots(-np.asarray(ma, dtype=float)),
        _reflect_roots(sar),
        -_reflect_roots(-np.asarray(sma, dtype=float)),
    ])


def _css_residuals(w: np.ndarray, theta: np.ndarray, orders: SarimaOrders) -> np.ndarray:
    """One-step errors of the ARMA recursion, conditioning on the first
    ``ar_span`` observations and zero pre-sample residuals."""
    ar, ma, sar, sma = _split_params(theta, orders)
    ar_full = _expand_poly(ar, sar, orders.s, -1.0)   # 1 - sum a_k L^k, returns -a_k? no: see below
    ma_full = _expand_poly(ma, sma, orders.s, +1.0)
    # ar_full holds the product-polynomial coefficients on L^1.. with the
    # leading 1 stripped; the recursion needs  w_t + sum ar_full_k w_{t-k}
    A = ar_full.size
    rhs = lfilter(np.concatenate([[1.0], ar_full]), [1.0], w)[A:]
    resid = lfilter([1.0], np.concatenate([[1.0], ma_full]), rhs)
    return resid


def _css(w: np.ndarray, theta: np.ndarray, orders: SarimaOrders) -> float:
    resid = _css_residuals(w, theta, orders)
    return float(resid @ resid)


def _lagmat(x: np.ndarray, lags: list[int]) -> np.ndarray:
    """Columns x_{t-l} for each requested lag, aligned to t = max(lags)..n-1."""
    m = max(lags)
    return np.column_stack([x[m - l : x.size - l] for l in lags])


def _hannan_rissanen_init(w: np.ndarray, orders: SarimaOrders) -> np.ndarray:
    """Least-squares starting values for the simplex search.

    A long autoregression supplies residual proxies; the model coefficients
    then come from regressing on lagged values and lagged proxies at the
    model's own lags (cross-products of the multiplicative polynomials are
    left to the optimizer).
    """
    p, q, P, Q, s = orders.p, orders.q, orders.P, orders.Q, orders.s
    n = w.size
    ar_lags = list(range(1, p + 1)) + [s * j for j in range(1, P + 1)]
    ma_lags = list(range(1, q + 1)) + [s * j for j in range(1, Q + 1)]
    if not ar_lags and not ma_lags:
        return np.zeros(0)

    def solve(X: np.ndarray, y: np.ndarray) -> np.ndarray:
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        return beta

    if not ma_lags:
        X = _lagmat(w, ar_lags)
        y = w[max(ar_lags):]
        beta = solve(X, y)
        theta = np.concatenate([beta[:p], np.zeros(0), beta[p:], np.zeros(0)])
        return _repair(theta, orders)

    m_long = int(max(math.floor(math.log(max(n, 3)) ** 2),
                     2 * max(orders.ar_span, orders.ma_span)))
    m_long = max(1, min(m_long, max(n // 3, 1)))
    Xl = _lagmat(w, list(range(1, m_long + 1)))
    yl = w[m_long:]
    phi_long = solve(Xl, yl)
    resid_proxy = np.concatenate([np.zeros(m_long), yl - Xl @ phi_long])

    start = max(max(ar_lags, default=0), max(ma_lags), m_long)
    y = w[start:]
    cols = [w[start - l : n - l] for l in ar_lags]
    cols += [resid_proxy[start - l : n - l] for l in ma_lags]
    beta = solve(np.column_stack(cols), y)
    k_ar = len(ar_lags)
    ar_part, sar_part = beta[:p], beta[p:k_ar]
    ma_part, sma_part = beta[k_ar : k_ar + q], beta[k_ar + q :]
    theta = np.concatenate([ar_part, ma_part, sar_part, sma_part])
    return _repair(theta, orders)


def fit(
    s: Series,
    orders: SarimaOrders,
    max_iterations: int = 500,
    rel_tol: float = 1e-8,
) -> SarimaModel:
    """Estimate a model on ``s`` by conditional-sum-of-squares minimization.

    Raises ``TooShortError`` when the differenced series cannot support the
    parameter count and ``DegenerateAfterDifferencingError`` when nothing
    but a constant remains. A search that hits the iteration cap while
    still improving is returned with ``converged=False`` rather than
    raised.
    """
    x = s.values
    w = difference_values(x, orders.d, orders.D, orders.s)
    n_w = w.size
    if n_w < 10 * (orders.k_params + 1):
        raise TooShortError(
            f"{n_w} observations after differencing cannot support "
            f"{orders.k_params} parameters"
        )
    if np.ptp(w) == 0.0:
        raise DegenerateAfterDifferencingError("series is constant after differencing")

    include_intercept = orders.d == 0 and orders.D == 0
    mu = float(w.mean()) if include_intercept else 0.0
    z = w - mu

    theta0 = _hannan_rissanen_init(z, orders)
    css_init = _css(z, theta0, orders)

    converged = True
    if theta0.size:
        history: list[float] = []

        def objective(t: np.ndarray) -> float:
            val = _css(z, _repair(t, orders), orders)
            history.append(val)
            return val

        result = minimize(
            objective,
            theta0,
            method="Nelder-Mead",
            options={
                "maxiter": max_iterations,
                "maxfev": 4 * max_iterations,
                "fatol": max(css_init, 1e-12) * rel_tol,
                "xatol": 1e-6,
            },
        )
        theta = _repair(result.x, orders)
        best = _css(z, theta, orders)
        if best > css_init:  # the optimizer never worsens its start
            theta, best = theta0, css_init
        if not result.success:
            # cap was hit; call it converged anyway if the last stretch of
            # evaluations barely moved the running best
            running = np.minimum.accumulate(history)
            lookback = min(len(running) - 1, 50)
            if lookback > 0:
                recent = (running[-1 - lookback] - running[-1]) / max(running[-1], 1e-300)
                converged = recent <= 1e-6
            else:
                converged = False
    else:
        theta = theta0
        best = css_init

    resid = _css_residuals(z, theta, orders)
    n_eff = resid.size
    if n_eff < 1:
        raise TooShortError("no effective observations left for the recursion")
    sigma2 = max(best / n_eff, 1e-300)
    aic = n_eff * math.log(sigma2) + 2 * (orders.k_params + 1)

    ar, ma, sar, sma = _split_params(theta, orders)
    tail_n = tail_length(orders)
    b = orders.ma_span
    return SarimaModel(
        orders=orders,
        ar_coeffs=ar,
        ma_coeffs=ma,
        seasonal_ar=sar,
        seasonal_ma=sma,
        intercept=mu,
        innovation_variance=sigma2,
        train_tail=x[-tail_n:],
        aic=aic,
        resid_tail=resid[-b:] if b else np.zeros(0),
        converged=converged,
        css=best,
        css_init=css_init,
    )


def reanchor(model: SarimaModel, s: Series) -> SarimaModel:
    """Same coefficients, tails recomputed on fresh data.

    Used when a refit fails: the previous model keeps forecasting from the
    newest observations.
    """
    orders = model.orders
    x = s.values
    w = difference_values(x, orders.d, orders.D, orders.s)
    theta = np.concatenate(
        [model.ar_coeffs, model.ma_coeffs, model.seasonal_ar, model.seasonal_ma]
    )
    resid = _css_residuals(w - model.intercept, theta, orders)
    b = orders.ma_span
    return replace(
        model,
        train_tail=x[-tail_length(orders):],
        resid_tail=resid[-b:] if b and resid.size >= b else np.zeros(b),
    )


def forecast(model: SarimaModel, h: int) -> np.ndarray:
    """Deterministic h-step-ahead point forecasts on the original scale.

    Runs the ARMA recursion on the differenced scale with future
    innovations at zero, then undoes the seasonal and ordinary differencing
    using the retained tail.
    """
    if h < 1:
        raise ValueError(f"forecast horizon must be >= 1, got {h}")
    orders = model.orders
    x_tail = model.train_tail
    # differenced history (relative to the tail; enough lags by construction)
    v_tail = difference_values(x_tail, orders.d, 0, 1)           # after (1-L)^d
    w_tail = difference_values(v_tail, 0, orders.D, orders.s)    # after (1-L^s)^D

    ar_full = _expand_poly(model.ar_coeffs, model.seasonal_ar, orders.s, -1.0)
    ma_full = _expand_poly(model.ma_coeffs, model.seasonal_ma, orders.s, +1.0)
    A, B = ar_full.size, ma_full.size

    z_hist = list(w_tail - model.intercept)
    resid_hist = list(model.resid_tail)
    if len(resid_hist) < B:
        resid_hist = [0.0] * (B - len(resid_hist)) + resid_hist
    z_fore = []
    for _ in range(h):
        val = 0.0
        for k in range(1, A + 1):
            past = z_fore[-k] if k <= len(z_fore) else (
                z_hist[len(z_fore) - k] if len(z_hist) + len(z_fore) >= k else 0.0
            )
            val -= ar_full[k - 1] * past
        for k in range(1, B + 1):
            # future innovations are zero; only pre-forecast residuals count
            back = k - len(z_fore) - 1
            if 0 <= back < len(resid_hist):
                val += ma_full[k - 1] * resid_hist[len(resid_hist) - 1 - back]
        z_fore.append(val)
    w_fore = np.asarray(z_fore) + model.intercept

    # invert the seasonal differencing, then the ordinary differencing
    v = list(v_tail)
    for k in range(h):
        if orders.D:
            w_fore[k] = w_fore[k] + v[-orders.s]
        v.append(w_fore[k])
    v_fore = np.asarray(v[-h:])
    out = list(x_tail)
    for k in range(h):
        val = v_fore[k]
        if orders.d >= 1:
            val = val + out[-1]
        if orders.d == 2:
            val = val + out[-1] - out[-2]
        out.append(val)
    return np.asarray(out[-h:])


def select_orders(
    s: Series,
    seasonal_period: int,
    is_stationary: bool,
    max_p: int = 2,
    max_q: int = 2,
    max_P: int = 1,
    max_Q: int = 1,
) -> SarimaOrders:
    """Grid-search orders by AIC with rule-driven differencing.

    ``d`` is 0 for stationary input and 1 otherwise; ``D`` is 1 whenever a
    seasonal period exists. Ties prefer fewer parameters, then AR terms
    over MA terms.
    """
    d = 0 if is_stationary else 1
    seasonal = seasonal_period > 1
    D = 1 if seasonal else 0
    s_ord = seasonal_period if seasonal else 1
    candidates = []
    for p in range(max_p + 1):
        for q in range(max_q + 1):
            for P in range(max_P + 1) if seasonal else (0,):
                for Q in range(max_Q + 1) if seasonal else (0,):
                    candidates.append(SarimaOrders(p, d, q, P, D, Q, s_ord))

    best: tuple | None = None
    errors: list[str] = []
    for orders in candidates:
        try:
            model = fit(s, orders)
        except Exception as exc:  # noqa: BLE001 - each candidate may fail independently
            errors.append(f"{orders.label()}: {exc}")
            continue
        key = (model.aic, orders.k_params, orders.q + orders.Q, orders.Q, orders.P)
        if best is None or key < best[0]:
            best = (key, orders)
    if best is None:
        raise AllFitsFailedError(
            "every candidate order failed: " + "; ".join(errors[:5])
        )
    return best[1]


def in_sample_residuals(model: SarimaModel, s: Series) -> tuple[int, np.ndarray]:
    """One-step in-sample residuals of ``model`` on ``s``.

    Returns ``(offset, residuals)`` where ``offset`` is the index in the
    original series of the first residual: differencing consumes
    ``d + s*D`` observations and the recursion conditions on ``ar_span``
    more. Because differencing is linear in known past values, each
    residual is exactly the one-step prediction error on the original
    scale.
    """
    orders = model.orders
    w = difference_values(s.values, orders.d, orders.D, orders.s)
    theta = np.concatenate(
        [model.ar_coeffs, model.ma_coeffs, model.seasonal_ar, model.seasonal_ma]
    )
    resid = _css_residuals(w - model.intercept, theta, orders)
    offset = orders.d + orders.s * orders.D + orders.ar_span
    return offset, resid


# -- plain-text model serialization -----------------------------------------

_MODEL_FORMAT = "adsas-sarima/1"


def _hex_list(values: np.ndarray) -> str:
    return " ".join(float(v).hex() for v in np.asarray(values, dtype=float))


def _unhex_list(text: str) -> np.ndarray:
    parts = text.split()
    return np.asarray([float.fromhex(p) for p in parts], dtype=float)


def model_to_text(model: SarimaModel) -> str:
    """Serialize a model as a versioned key/value document.

    Doubles are hexadecimal floats, so the round trip is bit-exact.
    """
    o = model.orders
    lines = [
        _MODEL_FORMAT,
        f"orders: {o.p} {o.d} {o.q} {o.P} {o.D} {o.Q} {o.s}",
        f"converged: {int(model.converged)}",
        f"intercept: {float(model.intercept).hex()}",
        f"sigma2: {float(model.innovation_variance).hex()}",
        f"aic: {float(model.aic).hex()}",
        f"css: {float(model.css).hex()}",
        f"css_init: {float(model.css_init).hex()}",
        f"ar: {_hex_list(model.ar_coeffs)}",
        f"ma: {_hex_list(model.ma_coeffs)}",
        f"sar: {_hex_list(model.seasonal_ar)}",
        f"sma: {_hex_list(model.seasonal_ma)}",
        f"train_tail: {_hex_list(model.train_tail)}",
        f"resid_tail: {_hex_list(model.resid_tail)}",
    ]
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> SarimaModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _MODEL_FORMAT:
        raise ValueError(f"unsupported model format header: {lines[0]!r}" if lines else "empty model document")
    fields: dict[str, str] = {}
    for ln in lines[1:]:
        key, _, value = ln.partition(":")
        fields[key.strip()] = value.strip()
    p, d, q, P, D, Q, s = (int(v) for v in fields["orders"].split())
    orders = SarimaOrders(p, d, q, P, D, Q, s)
    return SarimaModel(
        orders=orders,
        ar_coeffs=_unhex_list(fields["ar"]),
        ma_coeffs=_unhex_list(fields["ma"]),
        seasonal_ar=_unhex_list(fields["sar"]),
        seasonal_ma=_unhex_list(fields["sma"]),
        intercept=float.fromhex(fields["intercept"]),
        innovation_variance=float.fromhex(fields["sigma2"]),
        train_tail=_unhex_list(fields["train_tail"]),
        aic=float.fromhex(fields["aic"]),
        resid_tail=_unhex_list(fields["resid_tail"]),
        converged=bool(int(fields["converged"])),
        css=float.fromhex(fields["css"]),
        css_init=float.fromhex(fields["css_init"]),
    )
