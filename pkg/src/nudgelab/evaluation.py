"""Utility accounting, dominance tests, classification and group metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import UsageError
from .policy import AllocationPlan, model_inputs
from .world import Population, World

LOG_LOSS_EPS = 1e-12


@dataclass
class UtilityReport:
    label: str
    per_individual: np.ndarray
    total: float
    cost: float
    mode: str
    successes: int | None = None
    outcomes: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.per_individual.size


def response_probabilities(source, population: Population, round_: int = 0) -> np.ndarray:
    """Success probabilities from a world (ground truth) or a fitted model."""
    if isinstance(source, World):
        return source.response_matrix(population, round_)
    if hasattr(source, "predict_proba"):
        return source.predict_proba(model_inputs(source, population))
    raise UsageError(f"cannot draw probabilities from {type(source).__name__}")


def _plan_costs(plan: AllocationPlan, costs) -> np.ndarray:
    costs = np.asarray(costs, dtype=np.float64)
    if plan.decisions.size and plan.decisions.max() >= costs.size:
        raise UsageError(f"plan uses nudge {plan.decisions.max()} but only {costs.size} costs given")
    return costs[plan.decisions]


def _prob_matrix(plan: AllocationPlan, probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        probs = probs.reshape(len(plan), -1)
    if probs.shape[0] != len(plan):
        raise UsageError(f"{probs.shape[0]} probability rows for a plan of {len(plan)}")
    return probs


def expected_utility(plan: AllocationPlan, probs, benefit: float, costs) -> UtilityReport:
    """``benefit * p[i, decision_i] - cost[decision_i]`` per individual, summed."""
    probs = _prob_matrix(plan, probs)
    paid = _plan_costs(plan, costs)
    p = probs[np.arange(len(plan)), plan.decisions]
    per = benefit * p - paid
    return UtilityReport(plan.label, per, math.fsum(per), math.fsum(paid), "expected")


def realized_utility(plan: AllocationPlan, world: World, population: Population, round_: int,
                     benefit: float, costs=None) -> UtilityReport:
    """Draw outcomes for the plan and score ``benefit * y - cost``.

    Draws come from the world's per-(individual, round) streams and accrue
    exposure for every nudge applied.
    """
    if not np.array_equal(plan.ids, population.ids):
        raise UsageError("plan and population list different individuals")
    costs = world.nudges.costs if costs is None else costs
    paid = _plan_costs(plan, costs)
    y = world.sample_outcomes(population, plan.decisions, round_)
    per = benefit * y - paid
    return UtilityReport(plan.label, per, math.fsum(per), math.fsum(paid), "realized",
                         int(y.sum()), y)


def harm_count(plan: AllocationPlan, probs, benefit: float, costs) -> int:
    """Individuals whose expected utility under the plan falls below no nudging."""
    probs = _prob_matrix(plan, probs)
    planned = expected_utility(plan, probs, benefit, costs).per_individual
    baseline = benefit * probs[:, 0] - float(np.asarray(costs)[0])
    return int(np.sum(planned < baseline))


@dataclass
class DominanceResult:
    dominates: bool
    margins: dict


def dominance_check(personalized: UtilityReport,
                    uniforms: Sequence[UtilityReport]) -> DominanceResult:
    """Personalized allocation dominates when its total is >= every uniform total."""
    margins = {}
    for rep in uniforms:
        if rep.n != personalized.n or rep.mode != personalized.mode:
            raise UsageError(
                f"report {rep.label!r} covers {rep.n} individuals ({rep.mode}), "
                f"personalized covers {personalized.n} ({personalized.mode})"
            )
        margins[rep.label] = personalized.total - rep.total
    return DominanceResult(all(m >= 0 for m in margins.values()), margins)


def stacked_nudge_payout(nudges: Sequence[int], probs, costs, mode: str = "simultaneous",
                         gamma: float = 1.0) -> tuple[float, float]:
    """Combined success probability and total cost of stacking several nudges.

    Costs always add up. Probabilities combine by noisy-or. In ``"sequential"``
    mode a nudge that already appeared earlier in the sequence contributes
    ``p * gamma**k`` where ``k`` counts its earlier applications.
    """
    if mode not in ("simultaneous", "sequential"):
        raise UsageError(f"unknown stacking mode {mode!r}")
    if not 0.0 < gamma <= 1.0:
        raise UsageError(f"gamma must lie in (0, 1], got {gamma}")
    nudges = [int(u) for u in nudges]
    if not nudges:
        return 0.0, 0.0
    if 0 in nudges:
        raise UsageError("the no-nudge arm cannot be stacked")
    probs = np.asarray(probs, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    seen: dict[int, int] = {}
    fail = 1.0
    for u in nudges:
        p = probs[u]
        if mode == "sequential":
            p *= gamma ** seen.get(u, 0)
            seen[u] = seen.get(u, 0) + 1
        fail *= 1.0 - p
    return 1.0 - fail, math.fsum(costs[u] for u in nudges)


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _ratio(a, b):
    return a / b if b else 0.0


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    accuracy: float
    log_loss: float
    precision: float
    recall: float
    f1: float
    threshold: float
    per_arm: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.confusion.total

    def to_dict(self) -> dict:
        c = self.confusion
        return {
            "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
            "accuracy": self.accuracy, "log_loss": self.log_loss,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "threshold": self.threshold,
            "per_arm": {str(k): [v.tp, v.fp, v.fn, v.tn] for k, v in sorted(self.per_arm.items())},
        }


def _confusion(labels, outcomes) -> ConfusionMatrix:
    return ConfusionMatrix(
        int(np.sum(labels & outcomes)), int(np.sum(labels & ~outcomes)),
        int(np.sum(~labels & outcomes)), int(np.sum(~labels & ~outcomes)),
    )


def classification_metrics(probs, outcomes, threshold: float = 0.5, arms=None) -> MetricsReport:
    """Hard labels at ``p >= threshold``; log-loss clips probabilities at 1e-12.

    Precision, recall and F1 are 0 when their denominator is empty. Passing
    ``arms`` adds a confusion matrix per nudge arm.
    """
    probs = np.asarray(probs, dtype=np.float64).ravel()
    y = np.asarray(outcomes).ravel()
    if probs.size == 0:
        raise UsageError("cannot compute metrics on empty input")
    if probs.size != y.size:
        raise UsageError("predictions and outcomes differ in length")
    if not 0.0 < threshold < 1.0:
        raise UsageError(f"threshold must lie in (0, 1), got {threshold}")
    labels = probs >= threshold
    truth = y.astype(bool)
    cm = _confusion(labels, truth)
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    f1 = _ratio(2 * precision * recall, precision + recall)
    p = np.clip(probs, LOG_LOSS_EPS, 1 - LOG_LOSS_EPS)
    ll = -float(np.mean(np.where(truth, np.log(p), np.log1p(-p))))
    per_arm = {}
    if arms is not None:
        arms = np.asarray(arms).ravel()
        for a in np.unique(arms):
            sel = arms == a
            per_arm[int(a)] = _confusion(labels[sel], truth[sel])
    return MetricsReport(cm, (cm.tp + cm.tn) / cm.total, ll, precision, recall, f1,
                         threshold, per_arm)


@dataclass
class GroupStats:
    low: float
    high: float
    n: int
    metrics: MetricsReport | None
    mean_utility: float | None = None

    @property
    def ppv(self) -> float | None:
        if self.metrics is None or self.metrics.confusion.tp + self.metrics.confusion.fp == 0:
            return None
        return self.metrics.precision


@dataclass
class GroupReport:
    trait: str
    groups: list
    parity_gap: float


def group_metrics(dataset, probs, trait: str, bins: Sequence[float], threshold: float = 0.5,
                  utilities=None) -> GroupReport:
    """Metrics per bin of ``trait`` and the predictive-value-parity gap.

    Bins are half-open ``[edge_k, edge_k+1)`` except the last, which is closed.
    The gap is max PPV minus min PPV over groups with at least one positive
    prediction.
    """
    if trait not in dataset.columns:
        raise UsageError(f"unknown grouping trait {trait!r}")
    edges = np.asarray(bins, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise UsageError("bins must be at least two strictly increasing edges")
    values = dataset.traits[:, dataset.columns.index(trait)]
    if values.size and (values.min() < edges[0] or values.max() > edges[-1]):
        raise UsageError(f"bins {edges.tolist()} do not cover the range of {trait!r}")
    probs = np.asarray(probs, dtype=np.float64).ravel()
    if probs.size != values.size:
        raise UsageError("need one prediction per record")
    group = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, edges.size - 2)
    groups = []
    for g in range(edges.size - 1):
        sel = group == g
        n = int(sel.sum())
        metrics = (classification_metrics(probs[sel], dataset.outcomes[sel], threshold)
                   if n else None)
        mean_u = None
        if utilities is not None and n:
            mean_u = float(np.mean(np.asarray(utilities, dtype=np.float64)[sel]))
        groups.append(GroupStats(float(edges[g]), float(edges[g + 1]), n, metrics, mean_u))
    ppvs = [s.ppv for s in groups if s.ppv is not None]
    gap = max(ppvs) - min(ppvs) if ppvs else 0.0
    return GroupReport(trait, groups, gap)


def decay_monitor(losses: Sequence[float], window: int, ratio: float) -> list[bool]:
    """Flag rounds whose trailing-window mean loss exceeds ``ratio`` times the baseline.

    The baseline is the mean over the first ``window`` rounds; a round can
    only alarm once ``2 * window`` rounds have been seen.
    """
    if window < 2:
        raise UsageError(f"decay window must be >= 2, got {window}")
    if not ratio > 1:
        raise UsageError(f"alarm ratio must be > 1, got {ratio}")
    losses = np.asarray(losses, dtype=np.float64)
    alarms = [False] * losses.size
    if losses.size < 2 * window:
        return alarms
    baseline = losses[:window].mean()
    for t in range(2 * window - 1, losses.size):
        alarms[t] = bool(losses[t - window + 1 : t + 1].mean() > ratio * baseline)
    return alarms
