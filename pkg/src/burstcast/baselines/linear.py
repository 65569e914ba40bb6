"""Ridge-stabilised least squares on single-row features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_RIDGE = 1e-8


class LinearError(ValueError):
    pass


@dataclass
class LinearModel:
    coef: np.ndarray
    intercept: float
    ridge: float = DEFAULT_RIDGE
    feature_names: list[str] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.coef.shape[0]:
            raise LinearError(f"design has {X.shape[-1]} columns, model has {self.coef.shape[0]}")
        return X @ self.coef + self.intercept

    def to_dict(self) -> dict:
        return {
            "kind": "linear",
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "ridge": self.ridge,
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> LinearModel:
        return cls(
            coef=np.asarray(doc["coef"], dtype=np.float64),
            intercept=float(doc["intercept"]),
            ridge=float(doc["ridge"]),
            feature_names=list(doc.get("feature_names", [])),
        )


def linear_fit(X: np.ndarray, y: np.ndarray, ridge: float = DEFAULT_RIDGE, feature_names=None) -> LinearModel:
    """Solve (X'X + ridge*I) b = X'y with an unpenalized intercept.

    Columns are centred first (which is what leaving the intercept out of the
    penalty amounts to), then the penalized problem is solved as an augmented
    least-squares system by SVD rather than through the normal equations.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise LinearError(f"design {X.shape} and target {y.shape} are not aligned")
    if ridge < 0:
        raise LinearError("ridge must be >= 0")
    n, f = X.shape
    if n == 0:
        raise LinearError("no rows to fit")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    if ridge > 0:
        A = np.vstack([Xc, np.sqrt(ridge) * np.eye(f)])
        b = np.concatenate([yc, np.zeros(f)])
    else:
        A, b = Xc, yc
    coef, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    if ridge == 0 and rank < f:
        raise LinearError(
            f"design is rank deficient ({rank} of {f} centred columns); use a ridge > 0"
        )
    return LinearModel(
        coef=coef,
        intercept=y_mean - float(x_mean @ coef),
        ridge=float(ridge),
        feature_names=list(feature_names or []),
    )
