import importlib
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from burstcast import _pykernels, kernels

try:
    from burstcast import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
BACKENDS = [_pykernels] + ([_ckernels] if _ckernels is not None else [])


def direct_residuals(yc, ar, ma, start):
    """Plain-numpy oracle for an ARMA residual recursion given {lag: coef} maps."""
    e = np.zeros(len(yc))
    for t in range(start, len(yc)):
        pred = sum(c * yc[t - k] for k, c in ar.items())
        pred += sum(c * e[t - k] for k, c in ma.items() if t - k >= 0)
        e[t] = yc[t] - pred
    return e


@pytest.mark.parametrize("impl", BACKENDS)
def test_css_residuals_oracle(impl):
    rng = np.random.default_rng(0)
    y = rng.normal(size=300)
    ar = {1: 0.5, 52: -0.2, 53: 0.1}
    ma = {1: 0.3, 52: 0.25}
    got = impl.css_residuals(y, list(ar), list(ar.values()), list(ma), list(ma.values()), 53)
    np.testing.assert_allclose(got, direct_residuals(y, ar, ma, 53), atol=1e-13)
    assert np.all(got[:53] == 0)


@pytest.mark.parametrize("impl", BACKENDS)
def test_poisson_inverse_matches_scipy_quantile(impl):
    rng = np.random.default_rng(1)
    for lam in (0.3, 2.5, 17.0, 150.0):
        for u in rng.random(50):
            assert impl.poisson_inverse(lam, u) == int(stats.poisson.ppf(u, lam))
    assert impl.poisson_inverse(0.0, 0.999) == 0
    with pytest.raises(ValueError):
        impl.poisson_inverse(701.0, 0.5)
    with pytest.raises(ValueError):
        impl.poisson_inverse(-1.0, 0.5)


@pytest.mark.parametrize("impl", BACKENDS)
def test_hawkes_intensity_recursion(impl):
    base = np.array([1.0, 2.0, 0.5, 0.5])
    u = np.array([0.9, 0.5, 0.1, 0.7])
    counts, lam = impl.hawkes_counts(base, 0.4, 0.5, u)
    excite = 0.0
    for t in range(4):
        if t:
            excite = 0.5 * excite + 0.4 * counts[t - 1]
        assert lam[t] == base[t] + excite
        assert counts[t] == impl.poisson_inverse(lam[t], u[t])


@needs_ext
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 3), st.integers(0, 3))
def test_backends_agree_bit_for_bit_on_residuals(seed, p, q):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=200)
    ar_l = list(range(1, p + 1)) + [52]
    ma_l = list(range(1, q + 1))
    ar_c = rng.uniform(-0.5, 0.5, len(ar_l)).tolist()
    ma_c = rng.uniform(-0.5, 0.5, len(ma_l)).tolist()
    a = _ckernels.css_residuals(y, ar_l, ar_c, ma_l, ma_c, 52)
    b = _pykernels.css_residuals(y, ar_l, ar_c, ma_l, ma_c, 52)
    assert np.array_equal(a, b)


@needs_ext
def test_backends_agree_on_poisson_and_hawkes():
    rng = np.random.default_rng(2)
    for lam, u in zip(rng.uniform(0, 700, 2000), rng.random(2000)):
        assert _ckernels.poisson_inverse(lam, u) == _pykernels.poisson_inverse(lam, u)
    base = rng.uniform(0, 5, 1000)
    u = rng.random(1000)
    c1, l1 = _ckernels.hawkes_counts(base, 0.2, 0.7, u)
    c2, l2 = _pykernels.hawkes_counts(base, 0.2, 0.7, u)
    assert np.array_equal(c1, c2) and np.array_equal(l1, l2)


def test_env_var_forces_python_backend():
    code = "from burstcast import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, BURSTCAST_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_selected_backend_is_reported():
    mod = importlib.reload(kernels)
    assert mod.BACKEND in ("cython", "python")
    if _ckernels is not None and os.environ.get("BURSTCAST_PURE_PYTHON") != "1":
        assert mod.BACKEND == "cython"
