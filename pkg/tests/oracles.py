"""Independent reference implementations used as test oracles.

Nothing here imports the code under test except for data containers, so a
bug in the library cannot hide in its own oracle.
"""

from __future__ import annotations

import math
from datetime import date, timedelta

import numpy as np

from burstcast.ingest import PanelSeries, WeekId
from burstcast.nn.model import ModelSpec, flatten, init_params, loss_and_grads, unflatten


def _sig(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z))


def scalar_lstm_cell(x, h, c, W, U, b):
    """One LSTM step written as explicit scalar loops; gate order [i f o g]."""
    d = len(h)
    n_in = len(x)
    z = [0.0] * (4 * d)
    for j in range(4 * d):
        acc = b[j]
        for k in range(n_in):
            acc += x[k] * W[k][j]
        for k in range(d):
            acc += h[k] * U[k][j]
        z[j] = acc
    h_new, c_new = [0.0] * d, [0.0] * d
    for j in range(d):
        i = _sig(z[j])
        f = _sig(z[d + j])
        o = _sig(z[2 * d + j])
        g = math.tanh(z[3 * d + j])
        c_new[j] = f * c[j] + i * g
        h_new[j] = o * math.tanh(c_new[j])
    return h_new, c_new


def scalar_lstm_sequence(xs, W, U, b):
    d = len(b) // 4
    h, c = [0.0] * d, [0.0] * d
    out = []
    for x in xs:
        h, c = scalar_lstm_cell(x, h, c, W, U, b)
        out.append(h)
    return out


def random_tiny_spec(variant: str, seed: int) -> ModelSpec:
    rng = np.random.default_rng(1000 + seed)
    d1, d2 = (int(v) for v in rng.integers(1, 5, size=2))
    return ModelSpec(
        variant=variant,
        n_features=int(rng.integers(1, 4)),
        lookback=int(rng.integers(1, 6)),
        hidden=(d1, d2),
        dense=int(rng.integers(1, 5)),
        dropout=0.2,
    )


def gradient_check(spec: ModelSpec, seed: int, eps: float = 1e-5, batch: int = 3) -> float:
    """Max relative error between analytic and central-difference gradients.

    Training mode is used with a dropout stream re-seeded for every
    evaluation, so all evaluations share one set of masks.
    """
    rng = np.random.default_rng(seed)
    params = init_params(spec, rng)
    # spread parameters wider than the init so the ReLU head and gates are exercised
    for k in params:
        params[k] = params[k] + 0.3 * rng.standard_normal(params[k].shape)
    X = rng.standard_normal((batch, spec.lookback, spec.n_features))
    y = rng.standard_normal(batch)

    def loss_at(p):
        return loss_and_grads(spec, p, X, y, train=True, rng=np.random.default_rng(seed + 7))

    _, grads = loss_at(params)
    flat = flatten(params, spec)
    analytic = flatten(grads, spec)
    numeric = np.empty_like(flat)
    for j in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[j] += eps
        dn[j] -= eps
        numeric[j] = (loss_at(unflatten(up, spec))[0] - loss_at(unflatten(dn, spec))[0]) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def monday_axis(n_weeks: int, start: date = date(1970, 1, 5)) -> list[WeekId]:
    """Consecutive Mondays from ``start`` with 1993 weeks skipped."""
    out, monday = [], start
    while len(out) < n_weeks:
        if monday.year != 1993:
            out.append(WeekId.from_monday(monday))
        monday += timedelta(days=7)
    return out


def make_panel(counts: np.ndarray, casualties: np.ndarray | None = None, start: date = date(1970, 1, 5)) -> PanelSeries:
    counts = np.asarray(counts, dtype=np.int64)
    n_g, n_t = counts.shape
    cas = np.zeros((n_g, n_t)) if casualties is None else np.asarray(casualties, dtype=np.float64)
    return PanelSeries(
        grain="region",
        weeks=monday_axis(n_t, start),
        geo_ids=list(range(1, n_g + 1)),
        counts=counts,
        casualties_total=cas,
        killed=cas / 2,
        wounded=cas / 2,
    )


def periodic_panel(n_geos: int = 3, n_weeks: int = 400, period: int = 52, seed: int = 0) -> PanelSeries:
    """Every geography repeats one random 52-week pattern exactly."""
    rng = np.random.default_rng(seed)
    pattern = rng.poisson(3.0, size=(n_geos, period))
    reps = -(-n_weeks // period)
    return make_panel(np.tile(pattern, reps)[:, :n_weeks])
