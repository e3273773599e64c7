"""Pooled linear factor model fit by (ridge) least squares."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import DimensionMismatchError, EmptyInputError, SingularDesignError
from .net import Network, NetworkSpec

# smallest acceptable squared Cholesky pivot relative to the matching diagonal entry
_PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(coef)) and np.isfinite(self.intercept)):
            raise ValueError("linear model parameters must be finite")
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def input_dim(self) -> int:
        return self.coefficients.size

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "coefficients": self.coefficients.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearModel":
        return cls(doc["intercept"], doc["coefficients"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "LinearModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def as_network(self) -> Network:
        """Single affine layer with the same input-output map (for LRP)."""
        spec = NetworkSpec(self.input_dim, (), 1)
        return Network([(self.coefficients[None, :], [self.intercept])], spec)


def ols_fit(X, y, ridge_lambda: float = 0.0) -> LinearModel:
    """Minimize ``||y - X b - a||^2 + ridge_lambda * ||b||^2``.

    The intercept is not penalized. Solved through the normal equations of
    the column-centred design with a Cholesky factorization; a design that
    is rank deficient (with ``ridge_lambda == 0``) raises
    SingularDesignError.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2:
        raise DimensionMismatchError("X must be two-dimensional")
    n, p = X.shape
    if n == 0:
        raise EmptyInputError("ols_fit needs samples")
    if y.size != n:
        raise DimensionMismatchError(f"{n} rows in X but {y.size} targets")
    if n < 2:
        raise EmptyInputError("ols_fit needs at least 2 samples")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("design matrix and targets must be finite")

    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc
    rhs = Xc.T @ (y - y_mean)
    if ridge_lambda > 0:
        gram[np.diag_indices(p)] += ridge_lambda
    hint = "" if ridge_lambda > 0 else "; try ridge_lambda > 0"
    try:
        factor, lower = linalg.cho_factor(gram, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularDesignError(f"design matrix is not full rank{hint}") from None
    pivots = np.diag(factor) ** 2
    scale = np.diag(gram)
    if np.any(pivots <= _PIVOT_TOL * np.maximum(scale, np.finfo(float).tiny)):
        raise SingularDesignError(f"design matrix is numerically rank deficient{hint}")
    beta = linalg.cho_solve((factor, lower), rhs, check_finite=False)
    return LinearModel(float(y_mean - x_mean @ beta), beta)


def linear_predict(model: LinearModel, x):
    """``intercept + x @ coefficients`` for one input or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise DimensionMismatchError(f"expected {model.input_dim} inputs, got {x.shape[-1]}")
    out = model.intercept + x @ model.coefficients
    return float(out) if x.ndim == 1 else out
