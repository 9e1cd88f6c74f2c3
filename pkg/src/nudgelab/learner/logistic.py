"""L2-regularized logistic regression fitted by full-batch gradient descent.

Parameters are a single vector ``w = [intercept, coef_1, ..., coef_m]`` and
the objective is the mean log-loss plus ``l2 / 2 * ||w||^2`` (the intercept is
regularized too). With no records the data term is zero.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import ConfigurationError, UnsupportedOperationError, UsageError
from ..world import logistic


def _augment(X):
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([np.ones((X.shape[0], 1)), X])


def log_loss(weights, X, y, l2=0.0) -> float:
    w = np.asarray(weights, dtype=np.float64)
    reg = 0.5 * l2 * float(w @ w)
    if len(y) == 0:
        return reg
    z = _augment(X) @ w
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - y * z)) + reg


def log_loss_gradient(weights, X, y, l2=0.0) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    grad = l2 * w
    if len(y) == 0:
        return grad
    Xa = _augment(X)
    resid = logistic(Xa @ w) - np.asarray(y, dtype=np.float64)
    return grad + Xa.T @ resid / len(y)


class LogisticArm(ClassifierMixin, BaseEstimator):
    """Success-probability model for a single nudge arm.

    Weights start at zero and are updated for exactly ``epochs`` steps, so an
    unfitted-looking model (``epochs=0``) predicts 0.5 everywhere.
    """

    def __init__(self, learning_rate=0.1, epochs=200, l2=0.0):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2

    def _check_params(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.l2 < 0:
            raise ConfigurationError(f"l2 must be >= 0, got {self.l2}")

    def fit(self, X, y):
        self._check_params()
        X = check_array(X, ensure_min_samples=0)
        y = np.asarray(y, dtype=np.float64).ravel()
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        w = np.zeros(X.shape[1] + 1)
        losses = [log_loss(w, X, y, self.l2)]
        for _ in range(int(self.epochs)):
            w = w - self.learning_rate * log_loss_gradient(w, X, y, self.l2)
            losses.append(log_loss(w, X, y, self.l2))
        self.weights_ = w
        self.loss_curve_ = np.array(losses)
        return self

    @property
    def intercept_(self):
        return self.weights_[0]

    @property
    def coef_(self):
        return self.weights_[1:]

    def gradient(self, weights, X, y) -> np.ndarray:
        return log_loss_gradient(weights, X, y, self.l2)

    def predict_success(self, X) -> np.ndarray:
        check_is_fitted(self, "weights_")
        X = check_array(X, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise UsageError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return logistic(_augment(X) @ self.weights_)

    def predict_proba(self, X):
        p = self.predict_success(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_success(X) >= 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        return {"kind": "logistic", "weights": self.weights_.tolist()}

    @classmethod
    def from_dict(cls, data, **params):
        est = cls(**params)
        est.weights_ = np.asarray(data["weights"], dtype=np.float64)
        est.n_features_in_ = est.weights_.size - 1
        est.classes_ = np.array([0, 1])
        return est


def gradient(estimator, weights, X, y) -> np.ndarray:
    """Analytic gradient of ``estimator``'s regularized log-loss at ``weights``."""
    if not isinstance(estimator, LogisticArm):
        raise UnsupportedOperationError(
            f"gradients are only defined for logistic arms, not {type(estimator).__name__}"
        )
    return estimator.gradient(weights, X, y)
