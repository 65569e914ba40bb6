"""Seasonal naive and trailing moving-average forecasts."""

from __future__ import annotations

import numpy as np

SEASON = 52
MA_WINDOW = 4


class InsufficientHistoryError(ValueError):
    pass


def seasonal_naive_forecast(series, t: int, s: int = SEASON) -> float:
    """y_{t-s}: the value one season before ``t``."""
    if t < s:
        raise InsufficientHistoryError(f"t={t} has fewer than s={s} earlier observations")
    return float(series[t - s])


def moving_average_forecast(series, t: int, k: int = MA_WINDOW) -> float:
    """Mean of the ``k`` values before ``t``."""
    if k < 1:
        raise ValueError("window must be >= 1")
    if t < k:
        raise InsufficientHistoryError(f"t={t} has fewer than k={k} earlier observations")
    return float(np.mean(np.asarray(series[t - k : t], dtype=np.float64)))


def seasonal_naive_panel(counts: np.ndarray, index: np.ndarray, s: int = SEASON) -> np.ndarray:
    """Forecasts for every geography at the panel week indices ``index``; shape (G, len(index))."""
    index = np.asarray(index)
    if index.size and index.min() < s:
        raise InsufficientHistoryError(f"week index {int(index.min())} has fewer than {s} earlier weeks")
    return counts[:, index - s].astype(np.float64)


def moving_average_panel(counts: np.ndarray, index: np.ndarray, k: int = MA_WINDOW) -> np.ndarray:
    index = np.asarray(index)
    if index.size and index.min() < k:
        raise InsufficientHistoryError(f"week index {int(index.min())} has fewer than {k} earlier weeks")
    y = counts.astype(np.float64)
    out = np.zeros((y.shape[0], index.size))
    for j in range(1, k + 1):
        out += y[:, index - j]
    return out / k
