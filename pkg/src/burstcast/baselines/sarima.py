"""Seasonal ARMA by conditional sum of squares, with a small AIC order search.

The model for the (optionally differenced) series w is

    phi(B) Phi(B^s) (w_t - mu) = theta(B) Theta(B^s) e_t

with ``phi(B) = 1 - sum phi_i B^i`` and ``theta(B) = 1 + sum theta_i B^i``.
Both products are expanded into plain lag polynomials and the one-step
residuals are run through the compiled recursion in :mod:`burstcast.kernels`.
Pre-sample residuals are zero.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .. import kernels

SEASON = 52
SIMPLEX_STEP = 0.25
_MAX_PACF = 1.0 - 1e-8


class SarimaError(ValueError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True, order=True)
class SarimaOrder:
    p: int = 0
    d: int = 0
    q: int = 0
    P: int = 0
    D: int = 0
    Q: int = 0
    s: int = SEASON

    def __post_init__(self) -> None:
        if min(self.p, self.d, self.q, self.P, self.D, self.Q) < 0:
            raise SarimaError(f"orders must be non-negative: {self}")
        if self.s < 2:
            raise SarimaError("seasonal period must be >= 2")

    @property
    def n_coefficients(self) -> int:
        return self.p + self.q + self.P + self.Q

    @property
    def max_ar_lag(self) -> int:
        return self.p + self.s * self.P

    @property
    def n_diff(self) -> int:
        """Observations consumed by differencing."""
        return self.d + self.s * self.D

    def to_list(self) -> list[int]:
        return [self.p, self.d, self.q, self.P, self.D, self.Q, self.s]

    def label(self) -> str:
        return f"({self.p},{self.d},{self.q})({self.P},{self.D},{self.Q})_{self.s}"


def _as_list(values, n: int, name: str) -> list[float]:
    if values is None:
        return [0.0] * n
    out = [float(v) for v in values]
    if len(out) != n:
        raise SarimaError(f"{name} has {len(out)} coefficients, order needs {n}")
    return out


@dataclass
class SarimaParams:
    order: SarimaOrder
    phi: list = None
    theta: list = None
    Phi: list = None
    Theta: list = None
    mu: float = 0.0
    sigma2: float = 1.0
    css: float = math.nan
    n_eff: int = 0
    aic: float = math.nan
    converged: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        o = self.order
        self.phi = _as_list(self.phi, o.p, "phi")
        self.theta = _as_list(self.theta, o.q, "theta")
        self.Phi = _as_list(self.Phi, o.P, "Phi")
        self.Theta = _as_list(self.Theta, o.Q, "Theta")
        self.mu = float(self.mu)

    def ar_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """(lags, coefficients) with w_t - mu = sum c_k (w_{t-k} - mu) + ..."""
        o = self.order
        poly = _poly_product(
            [1.0] + [-c for c in self.phi], _seasonal([-c for c in self.Phi], o.s)
        )
        mask = _poly_product([1.0] * (o.p + 1), _seasonal([1.0] * o.P, o.s))
        lags = np.nonzero(mask[1:])[0] + 1
        return lags.astype(np.int64), -poly[lags]

    def ma_terms(self) -> tuple[np.ndarray, np.ndarray]:
        o = self.order
        poly = _poly_product([1.0] + list(self.theta), _seasonal(list(self.Theta), o.s))
        mask = _poly_product([1.0] * (o.q + 1), _seasonal([1.0] * o.Q, o.s))
        lags = np.nonzero(mask[1:])[0] + 1
        return lags.astype(np.int64), poly[lags]

    def to_dict(self) -> dict:
        return {
            "kind": "sarima",
            "order": self.order.to_list(),
            "phi": list(self.phi),
            "theta": list(self.theta),
            "Phi": list(self.Phi),
            "Theta": list(self.Theta),
            "mu": self.mu,
            "sigma2": self.sigma2,
            "css": self.css,
            "n_eff": self.n_eff,
            "aic": self.aic,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> SarimaParams:
        return cls(
            order=SarimaOrder(*doc["order"]),
            phi=doc["phi"],
            theta=doc["theta"],
            Phi=doc["Phi"],
            Theta=doc["Theta"],
            mu=doc["mu"],
            sigma2=doc["sigma2"],
            css=doc["css"],
            n_eff=doc["n_eff"],
            aic=doc["aic"],
            converged=doc["converged"],
        )


def _seasonal(coefs: list[float], s: int) -> np.ndarray:
    out = np.zeros(s * len(coefs) + 1)
    out[0] = 1.0
    for j, c in enumerate(coefs, start=1):
        out[s * j] = c
    return out


def _poly_product(a, b) -> np.ndarray:
    return np.convolve(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def difference(series: np.ndarray, order: SarimaOrder) -> np.ndarray:
    w = np.asarray(series, dtype=np.float64)
    for _ in range(order.d):
        w = w[1:] - w[:-1]
    for _ in range(order.D):
        w = w[order.s :] - w[: -order.s]
    return w


def _diff_lag_terms(order: SarimaOrder) -> tuple[np.ndarray, np.ndarray]:
    """y_t = w_t + sum c_k y_{t-k} for the differencing operator."""
    poly = np.array([1.0])
    for _ in range(order.d):
        poly = _poly_product(poly, [1.0, -1.0])
    for _ in range(order.D):
        poly = _poly_product(poly, _seasonal([-1.0], order.s))
    lags = np.nonzero(poly[1:])[0] + 1
    return lags, -poly[lags]


def css_residuals(series: np.ndarray, params: SarimaParams, start: int | None = None) -> tuple[np.ndarray, int]:
    """One-step residuals of the differenced series and the first evaluated index."""
    o = params.order
    w = difference(series, o)
    if start is None:
        start = o.max_ar_lag
    if start < o.max_ar_lag:
        raise SarimaError(f"start {start} precedes the largest AR lag {o.max_ar_lag}")
    if len(w) - start <= o.n_coefficients + 1:
        raise SarimaError(
            f"series too short: {len(series)} observations, order {o.label()} evaluates from index "
            f"{start + o.n_diff} and needs more than {o.n_coefficients + 1} residuals"
        )
    ar_l, ar_c = params.ar_terms()
    ma_l, ma_c = params.ma_terms()
    resid = kernels.css_residuals(w - params.mu, ar_l, ar_c, ma_l, ma_c, start)
    return resid, start


def css_loss(series: np.ndarray, params: SarimaParams, start: int | None = None) -> float:
    """Sum of squared one-step residuals from ``start`` (default: the largest AR lag)."""
    resid, start = css_residuals(series, params, start)
    tail = resid[start:]
    return float(tail @ tail)


def _pacf_to_coefs(u: np.ndarray) -> list[float]:
    """Map unconstrained values to a stationary AR polynomial.

    tanh gives partial autocorrelations in (-1, 1); the Durbin-Levinson
    recursion turns them into coefficients. For one coefficient this is
    plain tanh.
    """
    r = np.clip(np.tanh(u), -_MAX_PACF, _MAX_PACF)
    a: list[float] = []
    for k, rk in enumerate(r):
        a = [a[j] - rk * a[k - 1 - j] for j in range(k)] + [float(rk)]
    return a


def _unpack(x: np.ndarray, order: SarimaOrder, center: float, scale: float) -> SarimaParams:
    pos = 1
    blocks = []
    for n, sign in ((order.p, 1.0), (order.q, -1.0), (order.P, 1.0), (order.Q, -1.0)):
        # an invertible MA polynomial 1 + theta B is the AR form with coefficients -theta
        blocks.append([sign * c for c in _pacf_to_coefs(x[pos : pos + n])])
        pos += n
    return SarimaParams(order, *blocks, mu=center + scale * float(x[0]))


def aic_value(css: float, n_eff: int, n_coefficients: int) -> float:
    """n ln(CSS/n) + 2k with k = coefficients + 1 for the innovation variance."""
    ratio = max(css / n_eff, np.finfo(float).tiny)
    return n_eff * math.log(ratio) + 2.0 * (n_coefficients + 1)


def sarima_fit(
    series: np.ndarray,
    order: SarimaOrder,
    start: int | None = None,
    maxiter: int | None = None,
) -> SarimaParams:
    """Minimise the CSS with Nelder-Mead from a fixed simplex.

    The search runs over (mean offset in units of the series' spread,
    unconstrained coefficient values). A second pass restarts from the first
    optimum. If the iteration budget runs out, the best point found is
    returned with ``converged=False`` and a :class:`ConvergenceWarning`.
    """
    y = np.asarray(series, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise SarimaError("series contains non-finite values")
    w = difference(y, order)
    if start is None:
        start = order.max_ar_lag
    # validates length
    css_residuals(y, SarimaParams(order), start)
    center = float(w.mean())
    scale = float(w.std())
    if scale < 1e-12:
        scale = 1.0
    n_eff = len(w) - start
    dim = 1 + order.n_coefficients
    ar_l0, _ = SarimaParams(order).ar_terms()
    ma_l0, _ = SarimaParams(order).ma_terms()

    def objective(x: np.ndarray) -> float:
        p = _unpack(x, order, center, scale)
        _, ar_c = p.ar_terms()
        _, ma_c = p.ma_terms()
        e = kernels.css_residuals(w - p.mu, ar_l0, ar_c, ma_l0, ma_c, start)[start:]
        return float(e @ e) / (n_eff * scale * scale)

    budget = maxiter if maxiter is not None else 600 * dim
    x = np.zeros(dim)
    converged = True
    for _ in range(2):
        simplex = np.vstack([x, x + SIMPLEX_STEP * np.eye(dim)])
        res = minimize(
            objective,
            x,
            method="Nelder-Mead",
            options={"initial_simplex": simplex, "maxiter": budget, "xatol": 1e-7, "fatol": 1e-12},
        )
        x = res.x
        converged = bool(res.success)
        if dim == 1:
            break
    if not converged:
        warnings.warn(f"Nelder-Mead did not converge for {order.label()}", ConvergenceWarning, stacklevel=2)
    fitted = _unpack(x, order, center, scale)
    css = css_loss(y, fitted, start)
    fitted.css = css
    fitted.n_eff = n_eff
    fitted.sigma2 = css / n_eff
    fitted.aic = aic_value(css, n_eff, order.n_coefficients)
    fitted.converged = converged
    return fitted


def default_grid(s: int = SEASON) -> list[SarimaOrder]:
    return [SarimaOrder(p, 0, q, P, 0, Q, s) for p, q, P, Q in itertools.product((0, 1), repeat=4)]


@dataclass
class SearchResult:
    best: SarimaParams
    table: list[dict]

    def to_dict(self) -> dict:
        return {"best": self.best.to_dict(), "aic_table": self.table}


def order_search(series: np.ndarray, grid: list[SarimaOrder] | None = None, s: int = SEASON) -> SearchResult:
    """Fit every order in ``grid`` on a common evaluation range; keep the lowest AIC.

    Ties go to fewer coefficients, then to the lexicographically smaller
    (p, q, P, Q).
    """
    grid = list(grid) if grid is not None else default_grid(s)
    if not grid:
        raise SarimaError("order grid is empty")
    if len({(o.d, o.D, o.s if o.D else 0) for o in grid}) > 1:
        raise SarimaError("all orders in a grid must share the differencing so AIC values compare")
    start = max(o.max_ar_lag for o in grid)
    rows: list[dict] = []
    fits: list[SarimaParams] = []
    for o in grid:
        row = {"order": o.to_list(), "k": o.n_coefficients + 1}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                fit = sarima_fit(series, o, start=start)
        except (SarimaError, FloatingPointError, ValueError) as exc:
            row.update(aic=None, css=None, converged=False, error=str(exc))
            rows.append(row)
            continue
        row.update(aic=fit.aic, css=fit.css, converged=fit.converged, error=None)
        rows.append(row)
        fits.append(fit)
    if not fits:
        raise SarimaError("every order in the grid failed to fit: " + "; ".join(r["error"] for r in rows))
    best = min(
        fits,
        key=lambda f: (f.aic, f.order.n_coefficients, (f.order.p, f.order.q, f.order.P, f.order.Q)),
    )
    return SearchResult(best=best, table=rows)


def sarima_forecast(
    params: SarimaParams,
    history: np.ndarray,
    horizon: int = 1,
    residuals: np.ndarray | None = None,
):
    """Forecast ``horizon`` steps past ``history`` with future shocks set to zero.

    ``residuals`` (aligned with the differenced history) may be supplied;
    otherwise they are recomputed by the CSS recursion. Returns a float for
    ``horizon == 1`` and an array otherwise.
    """
    if horizon < 1:
        raise SarimaError("horizon must be >= 1")
    o = params.order
    y = [float(v) for v in np.asarray(history, dtype=np.float64)]
    if len(y) < o.n_diff + o.max_ar_lag or len(y) < o.n_diff:
        raise SarimaError(
            f"history of {len(y)} weeks is shorter than the {o.n_diff + o.max_ar_lag} the order {o.label()} reads"
        )
    w = list(difference(np.asarray(y), o))
    if residuals is None:
        if w:
            ar_l, ar_c = params.ar_terms()
            ma_l, ma_c = params.ma_terms()
            eps = list(
                kernels.css_residuals(np.asarray(w) - params.mu, ar_l, ar_c, ma_l, ma_c, o.max_ar_lag)
            )
        else:
            eps = []
    else:
        eps = [float(v) for v in residuals]
        if len(eps) != len(w):
            raise SarimaError(f"{len(eps)} residuals for {len(w)} differenced observations")
    ar_l, ar_c = params.ar_terms()
    ma_l, ma_c = params.ma_terms()
    d_l, d_c = _diff_lag_terms(o)
    out = []
    for _ in range(horizon):
        n = len(w)
        pred = params.mu
        for lag, c in zip(ar_l, ar_c):
            pred += c * (w[n - lag] - params.mu)
        for lag, c in zip(ma_l, ma_c):
            if n - lag >= 0:
                pred += c * eps[n - lag]
        m = len(y)
        y_hat = pred + sum(c * y[m - lag] for lag, c in zip(d_l, d_c))
        w.append(pred)
        eps.append(0.0)
        y.append(y_hat)
        out.append(y_hat)
    return out[0] if horizon == 1 else np.array(out)


def one_step_predictions(params: SarimaParams, series: np.ndarray, index: np.ndarray) -> np.ndarray:
    """One-step forecasts of ``series[t]`` for each t in ``index`` from observations before t."""
    o = params.order
    y = np.asarray(series, dtype=np.float64)
    index = np.asarray(index, dtype=np.int64)
    first = o.n_diff + o.max_ar_lag
    if index.size and index.min() < first:
        raise SarimaError(f"index {int(index.min())} precedes the first forecastable week {first}")
    w = difference(y, o)
    ar_l, ar_c = params.ar_terms()
    ma_l, ma_c = params.ma_terms()
    eps = kernels.css_residuals(w - params.mu, ar_l, ar_c, ma_l, ma_c, o.max_ar_lag)
    # the residual is observation minus its one-step prediction; differencing adds back past values only
    return y[index] - eps[index - o.n_diff]


def fit_panel(
    counts: np.ndarray,
    train_end: int,
    index: np.ndarray,
    grid: list[SarimaOrder] | None = None,
    s: int = SEASON,
) -> tuple[np.ndarray, list[SearchResult]]:
    """Per-geography order search on weeks ``[0, train_end)`` and one-step forecasts at ``index``.

    Each geography's fit reads only its own row of ``counts``.
    """
    preds = np.zeros((counts.shape[0], len(index)))
    results = []
    for g in range(counts.shape[0]):
        series = counts[g].astype(np.float64)
        res = order_search(series[:train_end], grid=grid, s=s)
        preds[g] = one_step_predictions(res.best, series, index)
        results.append(res)
    return preds, results
