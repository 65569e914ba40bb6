"""Backend selection for the hot scalar loops.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-Python ``_pykernels`` module is. Setting ``BURSTCAST_PURE_PYTHON=1``
forces the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("BURSTCAST_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

css_residuals = _impl.css_residuals
poisson_inverse = _impl.poisson_inverse
hawkes_counts = _impl.hawkes_counts

__all__ = ["BACKEND", "css_residuals", "poisson_inverse", "hawkes_counts"]
