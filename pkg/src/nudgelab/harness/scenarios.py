"""Ready-made experiment configurations."""

from __future__ import annotations

import math

from .config import ExperimentConfig, parse_config


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def two_nudge_scenario(n: int = 1000, margin: float = 0.3, seed: int = 0, *,
                       low: float = 0.4, control: float = 0.3, generic: float = 0.5,
                       gamma: float = 1.0, drift: float = 0.0, trial_size: int = 4000,
                       deployment_rounds: int = 0, retrain_every: int = 0,
                       bandit: bool = False) -> ExperimentConfig:
    """Heterogeneous world where the best nudge depends on a binary trait.

    ``targeted_a`` succeeds with ``low + margin`` for ``group == 1`` and
    ``low`` otherwise; ``targeted_b`` mirrors it. ``generic`` is flat and the
    control arm succeeds with ``control``. Two continuous noise traits carry
    no signal. ``drift`` shifts ``targeted_a``'s group coefficient per round.
    """
    high = low + margin
    if not 0 < low < high < 1:
        raise ValueError(f"need 0 < low < low + margin < 1, got low={low}, margin={margin}")
    slope = _logit(high) - _logit(low)
    data = {
        "problem_id": "two-nudge-heterogeneous",
        "seed": seed,
        "world": {
            "population_size": n,
            "gamma": gamma,
            "traits": [
                {"name": "group", "kind": "binary", "rate": 0.5},
                {"name": "activity", "kind": "continuous", "mean": 0.0, "std": 1.0},
                {"name": "tenure", "kind": "continuous", "mean": 0.0, "std": 1.0},
            ],
            "nudges": [
                {"label": "targeted_a", "cost": 0.0},
                {"label": "targeted_b", "cost": 0.0},
                {"label": "generic", "cost": 0.0},
            ],
            "response": {
                "none": {"intercept": _logit(control)},
                "targeted_a": {"intercept": _logit(low), "coefficients": {"group": slope},
                               "drift": {"coefficients": {"group": drift}}},
                "targeted_b": {"intercept": _logit(high), "coefficients": {"group": -slope}},
                "generic": {"intercept": _logit(generic)},
            },
        },
        "trial": {"population_size": trial_size, "rounds": 1, "test_fraction": 0.2,
                  "correlation_threshold": 0.95},
        "learner": {"kind": "logistic", "learning_rate": 0.5, "epochs": 300, "l2": 0.0,
                    "bandit": {"enabled": bandit, "epsilon": 0.1, "learning_rate": 0.1}},
        "policy": {"scoring": "raw", "cutoff": 0.0, "benefit": 1.0},
        "deployment": {"population_size": n, "rounds": deployment_rounds,
                       "retrain_every": retrain_every, "decay_window": 2, "decay_ratio": 1.5},
        "evaluation": {"threshold": 0.5, "group_trait": "group", "group_bins": [0.0, 0.5, 1.0]},
    }
    return parse_config(data)
