# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scalar recursions; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

cdef double POISSON_MAX_RATE = 700.0


def css_residuals(yc, ar_lags, ar_coefs, ma_lags, ma_coefs, Py_ssize_t start):
    cdef const double[::1] y = np.ascontiguousarray(yc, dtype=np.float64)
    cdef const long long[::1] arl = np.ascontiguousarray(ar_lags, dtype=np.int64)
    cdef const double[::1] arc = np.ascontiguousarray(ar_coefs, dtype=np.float64)
    cdef const long long[::1] mal = np.ascontiguousarray(ma_lags, dtype=np.int64)
    cdef const double[::1] mac = np.ascontiguousarray(ma_coefs, dtype=np.float64)
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t n_ar = arl.shape[0]
    cdef Py_ssize_t n_ma = mal.shape[0]
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] e = out
    cdef Py_ssize_t t, j, k
    cdef double pred
    for t in range(start, n):
        pred = 0.0
        for j in range(n_ar):
            pred += arc[j] * y[t - arl[j]]
        for j in range(n_ma):
            k = t - mal[j]
            if k >= 0:
                pred += mac[j] * e[k]
        e[t] = y[t] - pred
    return out


cdef long long _poisson_inverse(double lam, double u) except -1:
    cdef double p, cdf
    cdef long long k = 0
    if lam < 0.0 or lam > POISSON_MAX_RATE:
        raise ValueError(f"Poisson rate {lam!r} outside [0, {POISSON_MAX_RATE}]")
    p = exp(-lam)
    cdf = p
    while u > cdf:
        k += 1
        p = p * lam / k
        if p == 0.0:
            break
        cdf += p
    return k


def poisson_inverse(double lam, double u):
    return _poisson_inverse(lam, u)


def hawkes_counts(base, double eta, double rho, uniforms):
    cdef const double[::1] b = np.ascontiguousarray(base, dtype=np.float64)
    cdef const double[::1] u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0]
    counts_arr = np.zeros(n, dtype=np.int64)
    inten_arr = np.zeros(n, dtype=np.float64)
    cdef long long[::1] counts = counts_arr
    cdef double[::1] inten = inten_arr
    cdef double excite = 0.0, lam
    cdef long long prev = 0
    cdef Py_ssize_t t
    for t in range(n):
        if t > 0:
            excite = rho * excite + eta * prev
        lam = b[t] + excite
        inten[t] = lam
        prev = _poisson_inverse(lam, u[t])
        counts[t] = prev
    return counts_arr, inten_arr
