"""Per-arm success models, local explanations and the online bandit learner."""

from .bandit import EpsilonGreedyBandit
from .explain import Explanation, explain
from .forest import GiniTree, RandomForestArm, leaf_probability
from .logistic import LogisticArm, gradient, log_loss, log_loss_gradient
from .model import (
    NudgeResponseModel,
    TrainConfig,
    load_model,
    model_from_dict,
    model_to_dict,
    predict_probs,
    save_model,
    train,
)

__all__ = [
    "EpsilonGreedyBandit",
    "Explanation",
    "GiniTree",
    "LogisticArm",
    "NudgeResponseModel",
    "RandomForestArm",
    "TrainConfig",
    "explain",
    "gradient",
    "leaf_probability",
    "load_model",
    "log_loss",
    "log_loss_gradient",
    "model_from_dict",
    "model_to_dict",
    "predict_probs",
    "save_model",
    "train",
]
