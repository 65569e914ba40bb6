"""Forecast metrics per geography, macro and pooled summaries, and paired t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class EvalError(ValueError):
    pass


METRICS = ("rmse", "mae", "mse", "r2")


def _metrics(pred: np.ndarray, actual: np.ndarray, centre: float | None = None) -> dict:
    r = actual - pred
    mse = float(np.mean(r * r))
    mean = float(actual.mean()) if centre is None else centre
    sst = float(np.sum((actual - mean) ** 2))
    sse = float(np.sum(r * r))
    r2 = 1.0 - sse / sst if sst > 0 else math.nan
    return {"rmse": math.sqrt(mse), "mae": float(np.mean(np.abs(r))), "mse": mse, "r2": r2}


@dataclass
class MetricReport:
    """Per-geography metrics plus unweighted (macro) and all-observation (pooled) summaries.

    R^2 in each geography is measured against that geography's own test
    mean. Geographies whose actuals have zero variance have R^2 = NaN and are
    listed in ``r2_excluded``; the macro R^2 averages the rest.
    """

    per_geo: dict = field(default_factory=dict)
    macro: dict = field(default_factory=dict)
    pooled: dict = field(default_factory=dict)
    n_observations: dict = field(default_factory=dict)
    r2_excluded: list = field(default_factory=list)

    def to_rows(self, model: str) -> list[dict]:
        return [{"model": model, "geo": g, **{k: m[k] for k in METRICS}} for g, m in self.per_geo.items()]

    def to_dict(self) -> dict:
        return {
            "macro": dict(self.macro),
            "pooled": dict(self.pooled),
            "per_geo": {str(g): dict(m) for g, m in self.per_geo.items()},
            "n_observations": {str(g): n for g, n in self.n_observations.items()},
            "r2_excluded": list(self.r2_excluded),
        }


def macro_average(values) -> float:
    vals = [float(v) for v in values]
    if not vals:
        raise EvalError("cannot average an empty set of values")
    return math.fsum(vals) / len(vals)


def compute_metrics(pred, actual, groups=None) -> MetricReport:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    actual = np.asarray(actual, dtype=np.float64).ravel()
    if pred.shape != actual.shape:
        raise EvalError(f"{pred.size} predictions for {actual.size} actuals")
    if pred.size == 0:
        raise EvalError("no observations to score")
    if groups is None:
        groups = np.zeros(pred.size, dtype=np.int64)
    groups = np.asarray(groups).ravel()
    if groups.shape != pred.shape:
        raise EvalError("grouping vector is not aligned with the predictions")

    rep = MetricReport()
    # pooled R^2 keeps the per-geography centring so it stays comparable with the macro value
    centred_sst = 0.0
    for g in sorted(set(groups.tolist())):
        sel = groups == g
        m = _metrics(pred[sel], actual[sel])
        rep.per_geo[g] = m
        rep.n_observations[g] = int(sel.sum())
        if math.isnan(m["r2"]):
            rep.r2_excluded.append(g)
        centred_sst += float(np.sum((actual[sel] - actual[sel].mean()) ** 2))
    for k in ("rmse", "mae", "mse"):
        rep.macro[k] = macro_average(m[k] for m in rep.per_geo.values())
    r2s = [m["r2"] for m in rep.per_geo.values() if not math.isnan(m["r2"])]
    rep.macro["r2"] = macro_average(r2s) if r2s else math.nan
    pooled = _metrics(pred, actual)
    sse = float(np.sum((actual - pred) ** 2))
    pooled["r2"] = 1.0 - sse / centred_sst if centred_sst > 0 else math.nan
    rep.pooled = pooled
    return rep


def improvement_pct(candidate: float, reference: float) -> float:
    """Percent reduction of ``candidate`` relative to ``reference``."""
    if not reference > 0:
        raise EvalError(f"reference value must be positive, got {reference}")
    return 100.0 * (1.0 - candidate / reference)


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-16) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise EvalError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if a <= 0 or b <= 0:
        raise EvalError("incomplete beta needs a, b > 0")
    if not 0.0 <= x <= 1.0:
        raise EvalError("incomplete beta needs x in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    # the fraction converges fast on the side of the symmetry point
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df <= 0:
        raise EvalError("degrees of freedom must be positive")
    if t == 0:
        return 1.0
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return min(1.0, max(0.0, regularized_incomplete_beta(df / 2.0, 0.5, x)))


@dataclass
class SignificanceResult:
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    cohens_d: float
    mean_difference: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "t_statistic": self.t_statistic,
            "degrees_of_freedom": self.degrees_of_freedom,
            "p_value": self.p_value,
            "cohens_d": self.cohens_d,
            "mean_difference": self.mean_difference,
            "degenerate": self.degenerate,
        }


def paired_t_test(a, b) -> SignificanceResult:
    """Two-sided paired t-test on d = a - b with Cohen's d = mean(d) / sd(d)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise EvalError(f"paired samples differ in length ({a.size} vs {b.size})")
    n = a.size
    if n < 2:
        raise EvalError("a paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return SignificanceResult(0.0, df, 1.0, 0.0, 0.0, degenerate=True)
        inf = math.copysign(math.inf, mean)
        return SignificanceResult(inf, df, 0.0, inf, mean, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return SignificanceResult(t, df, t_two_sided_p(t, df), mean / sd, mean)
