"""Pure-Python versions of the scalar recursions in ``_ckernels.pyx``.

Both backends must agree bit-for-bit, so the arithmetic order here mirrors
the Cython source line by line.
"""

from __future__ import annotations

import math

import numpy as np

POISSON_MAX_RATE = 700.0


def css_residuals(yc, ar_lags, ar_coefs, ma_lags, ma_coefs, start):
    """One-step residuals of a mean-centred series under a lag-polynomial model.

    ``yc[t] - sum_j ar_coefs[j] * yc[t - ar_lags[j]] - sum_j ma_coefs[j] * e[t - ma_lags[j]]``
    for ``t >= start``; residuals before ``start`` (and any pre-sample
    residual) are zero.
    """
    yc = np.ascontiguousarray(yc, dtype=np.float64)
    n = yc.shape[0]
    resid = np.zeros(n, dtype=np.float64)
    ar_l = [int(v) for v in ar_lags]
    ar_c = [float(v) for v in ar_coefs]
    ma_l = [int(v) for v in ma_lags]
    ma_c = [float(v) for v in ma_coefs]
    n_ar = len(ar_l)
    n_ma = len(ma_l)
    y = yc.tolist()
    e = [0.0] * n
    for t in range(start, n):
        pred = 0.0
        for j in range(n_ar):
            pred += ar_c[j] * y[t - ar_l[j]]
        for j in range(n_ma):
            k = t - ma_l[j]
            if k >= 0:
                pred += ma_c[j] * e[k]
        e[t] = y[t] - pred
    resid[:] = e
    return resid


def poisson_inverse(lam, u):
    """Smallest k with Poisson(lam) CDF(k) >= u, walking the pmf recursively."""
    if lam < 0.0 or lam > POISSON_MAX_RATE:
        raise ValueError(f"Poisson rate {lam!r} outside [0, {POISSON_MAX_RATE}]")
    p = math.exp(-lam)
    cdf = p
    k = 0
    while u > cdf:
        k += 1
        p = p * lam / k
        if p == 0.0:
            break
        cdf += p
    return k


def hawkes_counts(base, eta, rho, uniforms):
    """Discrete self-exciting counts with a geometric kernel.

    intensity[t] = base[t] + excite[t], excite[t] = rho * excite[t-1] + eta * y[t-1];
    y[t] is drawn by inverse transform from ``uniforms[t]``.
    Returns ``(counts, intensity)``.
    """
    base = np.ascontiguousarray(base, dtype=np.float64)
    uniforms = np.ascontiguousarray(uniforms, dtype=np.float64)
    n = base.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    intensity = np.zeros(n, dtype=np.float64)
    b = base.tolist()
    u = uniforms.tolist()
    excite = 0.0
    prev = 0
    for t in range(n):
        if t > 0:
            excite = rho * excite + eta * prev
        lam = b[t] + excite
        intensity[t] = lam
        prev = poisson_inverse(lam, u[t])
        counts[t] = prev
    return counts, intensity
