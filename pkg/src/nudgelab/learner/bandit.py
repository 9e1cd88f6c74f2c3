"""Epsilon-greedy contextual bandit over per-arm online logistic models."""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigurationError, UsageError
from ..world import logistic


class EpsilonGreedyBandit:
    """Learns while deployed: explore with probability ``epsilon``, else exploit.

    Each arm keeps a logistic weight vector ``[intercept, coefs...]`` updated
    by one stochastic gradient step on the log-loss per observed outcome.
    ``choose`` and ``update`` on the same instance must not run concurrently.
    """

    def __init__(self, n_arms: int, n_features: int, epsilon: float = 0.1,
                 learning_rate: float = 0.1):
        if n_arms < 1 or n_features < 0:
            raise ConfigurationError("need at least one arm and a non-negative feature count")
        if not 0.0 <= epsilon <= 1.0:
            raise ConfigurationError(f"epsilon must lie in [0, 1], got {epsilon}")
        if not learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {learning_rate}")
        self.n_arms = n_arms
        self.n_features = n_features
        self.epsilon = epsilon
        self.learning_rate = learning_rate
        self.weights = np.zeros((n_arms, n_features + 1))
        self.counts = np.zeros(n_arms, dtype=np.int64)

    def _augment(self, x):
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size != self.n_features:
            raise UsageError(f"expected {self.n_features} traits, got {x.size}")
        return np.concatenate([[1.0], x])

    def predict(self, x) -> np.ndarray:
        return logistic(self.weights @ self._augment(x))

    def choose(self, x, rng: np.random.Generator) -> int:
        if rng.random() < self.epsilon:
            return int(rng.integers(self.n_arms))
        return int(np.argmax(self.predict(x)))

    def update(self, x, arm: int, y: int):
        if not 0 <= arm < self.n_arms:
            raise UsageError(f"unknown arm {arm}")
        xa = self._augment(x)
        p = logistic(self.weights[arm] @ xa)
        self.weights[arm] -= self.learning_rate * (p - y) * xa
        self.counts[arm] += 1
