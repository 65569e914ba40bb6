"""Classical comparators: seasonal naive, moving average, linear regression, SARIMA."""

from .linear import DEFAULT_RIDGE, LinearError, LinearModel, linear_fit
from .naive import (
    InsufficientHistoryError,
    moving_average_forecast,
    moving_average_panel,
    seasonal_naive_forecast,
    seasonal_naive_panel,
)
from .sarima import (
    ConvergenceWarning,
    SarimaError,
    SarimaOrder,
    SarimaParams,
    SearchResult,
    aic_value,
    css_loss,
    css_residuals,
    default_grid,
    fit_panel,
    one_step_predictions,
    order_search,
    sarima_fit,
    sarima_forecast,
)

__all__ = [
    "DEFAULT_RIDGE",
    "ConvergenceWarning",
    "InsufficientHistoryError",
    "LinearError",
    "LinearModel",
    "SarimaError",
    "SarimaOrder",
    "SarimaParams",
    "SearchResult",
    "aic_value",
    "css_loss",
    "css_residuals",
    "default_grid",
    "fit_panel",
    "linear_fit",
    "moving_average_forecast",
    "moving_average_panel",
    "one_step_predictions",
    "order_search",
    "sarima_fit",
    "sarima_forecast",
    "seasonal_naive_forecast",
    "seasonal_naive_panel",
]
