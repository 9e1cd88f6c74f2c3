"""Turning per-arm success probabilities into one nudge per individual."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, ParseError, UsageError
from .world import Population, World

SCORING_MODES = ("raw", "net")


@dataclass(frozen=True)
class PolicyConfig:
    """How scores are formed and when to fall back to no nudge.

    ``scoring="raw"`` ranks arms by success probability; ``"net"`` ranks by
    ``benefit * p - cost``. ``cutoff`` gates only the non-control arms: if
    none of them reaches it, the decision is nudge 0.
    """

    scoring: str = "raw"
    cutoff: float = 0.0
    benefit: float = 1.0
    costs: tuple = field(default=())

    def __post_init__(self):
        if self.scoring not in SCORING_MODES:
            raise ConfigurationError(f"scoring must be one of {SCORING_MODES}, got {self.scoring!r}")
        if not 0.0 <= self.cutoff <= 1.0:
            raise ConfigurationError(f"cutoff must lie in [0, 1], got {self.cutoff}")
        if not self.benefit > 0:
            raise ConfigurationError(f"benefit must be > 0, got {self.benefit}")
        object.__setattr__(self, "costs", tuple(float(c) for c in self.costs))

    def cost_vector(self, n_arms: int) -> np.ndarray:
        if not self.costs:
            return np.zeros(n_arms)
        if len(self.costs) != n_arms:
            raise UsageError(f"policy has {len(self.costs)} costs for {n_arms} arms")
        return np.asarray(self.costs)


@dataclass
class AllocationPlan:
    label: str
    ids: np.ndarray
    decisions: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.decisions = np.asarray(self.decisions, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        self.scores = scores if scores.ndim == 2 else scores.reshape(len(self.ids), -1)
        if self.scores.shape[0] != self.ids.size:
            raise UsageError("a plan needs one score row per individual")
        if self.decisions.shape != self.ids.shape:
            raise UsageError("a plan needs exactly one decision per individual")

    def __len__(self):
        return self.ids.size

    @property
    def n_arms(self) -> int:
        return self.scores.shape[1]

    def __eq__(self, other):
        if not isinstance(other, AllocationPlan):
            return NotImplemented
        return (self.label == other.label and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.decisions, other.decisions)
                and np.array_equal(self.scores, other.scores))


def score_matrix(probs, config: PolicyConfig) -> np.ndarray:
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if config.scoring == "raw":
        return probs.copy()
    return config.benefit * probs - config.cost_vector(probs.shape[1])


def decide(probs, config: PolicyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-row argmax decision with cutoff defaulting.

    Ties on the score go to the cheaper arm, then to the lower id.
    Returns ``(decisions, scores)``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise UsageError("probabilities must be an (individuals, arms) matrix")
    n, k = probs.shape
    scores = score_matrix(probs, config) if n else np.zeros((0, k))
    if n == 0:
        return np.zeros(0, dtype=np.int64), scores
    costs = config.cost_vector(k)
    best = scores.max(axis=1, keepdims=True)
    tied = scores == best
    cost_on_tie = np.where(tied, costs, np.inf)
    tied &= cost_on_tie == cost_on_tie.min(axis=1, keepdims=True)
    decisions = np.argmax(tied, axis=1)
    if k > 1:
        gated = probs[:, 1:].max(axis=1) < config.cutoff
        decisions[gated] = 0
    return decisions.astype(np.int64), scores


def model_inputs(model, population: Population) -> np.ndarray:
    """Population traits restricted to the columns the model was trained on."""
    columns = getattr(model, "columns_", None)
    if columns is None or list(columns) == population.columns:
        X = population.traits
    else:
        try:
            X = population.traits[:, [population.columns.index(c) for c in columns]]
        except ValueError as exc:
            raise UsageError(f"population lacks a model column: {exc}") from None
    expected = getattr(model, "n_features_in_", X.shape[1])
    if X.shape[1] != expected:
        raise UsageError(f"model expects {expected} traits, population has {X.shape[1]}")
    return X


def allocate_personalized(model, population: Population, config: PolicyConfig,
                          label: str = "personalized") -> AllocationPlan:
    probs = model.predict_proba(model_inputs(model, population))
    decisions, scores = decide(probs, config)
    return AllocationPlan(label, population.ids.copy(), decisions, scores)


def allocate_uniform(u: int, population: Population, n_arms: int,
                     label: str | None = None) -> AllocationPlan:
    """Everyone gets nudge ``u``; ``u = 0`` is the no-nudging counterfactual."""
    if not 0 <= u < n_arms:
        raise UsageError(f"unknown nudge id {u} for {n_arms} arms")
    n = len(population)
    scores = np.zeros((n, n_arms))
    scores[:, u] = 1.0
    return AllocationPlan(label or f"uniform_{u}", population.ids.copy(),
                          np.full(n, u, dtype=np.int64), scores)


def allocate_oracle(world: World, population: Population, config: PolicyConfig,
                    round_: int = 0, label: str = "oracle") -> AllocationPlan:
    """Same rule as :func:`allocate_personalized`, scored on the true responses."""
    if population.columns != world.columns:
        raise UsageError("population encoding does not match the world's traits")
    decisions, scores = decide(world.response_matrix(population, round_), config)
    return AllocationPlan(label, population.ids.copy(), decisions, scores)


class NudgeAllocator(BaseEstimator):
    """Estimator wrapper: learn per-arm responses, then predict a nudge per row.

    ``model`` is any estimator with ``fit(X, y, nudges)`` and an
    ``(n, n_arms)`` ``predict_proba``, usually a
    :class:`~nudgelab.learner.NudgeResponseModel`.
    """

    def __init__(self, model=None, scoring="raw", cutoff=0.0, benefit=1.0, costs=()):
        self.model = model
        self.scoring = scoring
        self.cutoff = cutoff
        self.benefit = benefit
        self.costs = costs

    def _config(self):
        return PolicyConfig(self.scoring, self.cutoff, self.benefit, tuple(self.costs))

    def fit(self, X, y, nudges):
        if self.model is None:
            from .learner import NudgeResponseModel

            base = NudgeResponseModel(n_arms=len(self.costs) or None)
        else:
            base = self.model
        self._config()
        self.model_ = clone(base).fit(X, y, nudges)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(X)

    def decision_scores(self, X):
        return score_matrix(self.predict_proba(X), self._config())

    def predict(self, X):
        return decide(self.predict_proba(X), self._config())[0]


PLAN_FIXED = ("id", "policy", "decision")


def write_plan_csv(plan: AllocationPlan, path):
    """``id,policy,decision,score_0..score_l``."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*PLAN_FIXED, *(f"score_{u}" for u in range(plan.n_arms))])
        for i, d, s in zip(plan.ids, plan.decisions, plan.scores):
            w.writerow([int(i), plan.label, int(d), *(repr(float(v)) for v in s)])


def read_plan_csv(path) -> AllocationPlan:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if not header or tuple(header[:3]) != PLAN_FIXED:
            raise ParseError("malformed plan header", "line 1")
        k = len(header) - 3
        if header[3:] != [f"score_{u}" for u in range(k)]:
            raise ParseError("score columns must be score_0..score_l", "line 1")
        ids, decisions, scores, labels = [], [], [], set()
        for line, row in enumerate(rows, start=2):
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells", f"line {line}")
            try:
                ids.append(int(row[0]))
                d = int(row[2])
                scores.append([float(v) for v in row[3:]])
            except ValueError as exc:
                raise ParseError(str(exc), f"line {line}") from None
            if not 0 <= d < k:
                raise ParseError(f"decision {d} outside 0..{k - 1}", f"line {line}")
            decisions.append(d)
            labels.add(row[1])
    if len(labels) > 1:
        raise ParseError(f"plan mixes policies {sorted(labels)}")
    label = labels.pop() if labels else ""
    return AllocationPlan(label, ids, decisions, np.asarray(scores).reshape(len(ids), k))
