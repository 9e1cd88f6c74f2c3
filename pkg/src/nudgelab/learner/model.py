"""Per-arm response models: one success-probability estimator per nudge."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import ConfigurationError, ParseError, TrainingError, UsageError
from .forest import MAX_SEED, RandomForestArm
from .logistic import LogisticArm

MODEL_FORMAT = "nudgelab-model/1"
LEARNER_KINDS = ("logistic", "forest")


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "logistic"
    learning_rate: float = 0.1
    epochs: int = 200
    l2: float = 0.0
    n_trees: int = 25
    max_depth: int = 4
    min_leaf: int = 5
    max_features: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ConfigurationError(f"learner kind must be one of {LEARNER_KINDS}, got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.epochs < 0 or self.l2 < 0:
            raise ConfigurationError("epochs and l2 must be >= 0")
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ConfigurationError("n_trees, max_depth and min_leaf must be >= 1")
        if self.max_features is not None and self.max_features < 1:
            raise ConfigurationError("max_features must be >= 1")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _mean_log_loss(p, y):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))) if len(y) else 0.0


class NudgeResponseModel(BaseEstimator):
    """Independent success models ``P(y=1 | traits, nudge=u)`` for every arm.

    ``fit(X, y, nudges)`` trains arm ``u`` on the records that received nudge
    ``u``. An arm without records falls back to the global success rate and
    is listed in ``fallback_arms_``. ``predict_proba`` returns one column per
    arm; rows are not normalized because each column is its own probability.
    """

    def __init__(self, n_arms=None, kind="logistic", learning_rate=0.1, epochs=200, l2=0.0,
                 n_trees=25, max_depth=4, min_leaf=5, max_features=None, random_state=0):
        self.n_arms = n_arms
        self.kind = kind
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.l2 = l2
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.random_state = random_state

    @classmethod
    def from_config(cls, config: TrainConfig, n_arms: int) -> "NudgeResponseModel":
        params = asdict(config)
        params["random_state"] = params.pop("seed")
        return cls(n_arms=n_arms, **params)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.kind, self.learning_rate, self.epochs, self.l2, self.n_trees,
                           self.max_depth, self.min_leaf, self.max_features, self.random_state)

    def _arm_estimator(self, arm, n_features):
        if self.kind == "logistic":
            return LogisticArm(self.learning_rate, self.epochs, self.l2)
        max_features = self.max_features
        if max_features is None:
            max_features = max(1, int(np.ceil(np.sqrt(n_features))))
        if max_features > n_features:
            raise ConfigurationError(
                f"max_features={max_features} exceeds the trait dimension {n_features}"
            )
        seed = int(np.random.default_rng([self.random_state, arm]).integers(MAX_SEED))
        return RandomForestArm(self.n_trees, self.max_depth, self.min_leaf, max_features, seed)

    def fit(self, X, y, nudges):
        config = self.train_config()
        X = check_array(X, ensure_min_samples=0)
        y = np.asarray(y, dtype=np.int64).ravel()
        nudges = np.asarray(nudges, dtype=np.int64).ravel()
        if X.shape[0] == 0:
            raise TrainingError("cannot train on an empty dataset")
        if not (X.shape[0] == y.size == nudges.size):
            raise UsageError("X, y and nudges must have the same length")
        n_arms = self.n_arms if self.n_arms is not None else int(nudges.max()) + 1
        if nudges.min() < 0 or nudges.max() >= n_arms:
            raise UsageError(f"nudge ids must lie in 0..{n_arms - 1}")
        self.n_arms_ = n_arms
        self.n_features_in_ = X.shape[1]
        self.base_rate_ = float(y.mean())
        self.config_hash_ = config.config_hash()
        self.estimators_ = []
        self.arm_counts_ = np.bincount(nudges, minlength=n_arms).tolist()
        self.fallback_arms_ = []
        self.train_log_loss_ = []
        for arm in range(n_arms):
            rows = nudges == arm
            if not rows.any():
                self.estimators_.append(None)
                self.fallback_arms_.append(arm)
                self.train_log_loss_.append(None)
                continue
            est = self._arm_estimator(arm, X.shape[1]).fit(X[rows], y[rows])
            self.estimators_.append(est)
            self.train_log_loss_.append(_mean_log_loss(est.predict_success(X[rows]), y[rows]))
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "estimators_")
        X = check_array(X, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise UsageError(f"expected {self.n_features_in_} trait columns, got {X.shape[1]}")
        cols = [
            np.full(X.shape[0], self.base_rate_) if est is None else est.predict_success(X)
            for est in self.estimators_
        ]
        return np.column_stack(cols) if cols else np.zeros((X.shape[0], 0))

    def predict(self, X) -> np.ndarray:
        """Arm with the highest predicted success probability, lowest id on ties."""
        return np.argmax(self.predict_proba(X), axis=1)

    def arm_log_loss(self, X, y, nudges) -> float:
        """Mean log-loss of each record's own-arm prediction."""
        p = self.predict_proba(X)[np.arange(len(nudges)), np.asarray(nudges, dtype=np.int64)]
        return _mean_log_loss(p, np.asarray(y, dtype=np.float64))


def train(dataset, nudges, config: TrainConfig) -> NudgeResponseModel:
    """Fit a :class:`NudgeResponseModel` on ``dataset`` covering every arm in ``nudges``."""
    if dataset.traits.shape[0] == 0:
        raise TrainingError("cannot train on an empty dataset")
    model = NudgeResponseModel.from_config(config, n_arms=len(nudges))
    model.fit(dataset.traits, dataset.outcomes, dataset.nudges)
    model.columns_ = list(dataset.columns)
    return model


def predict_probs(model: NudgeResponseModel, traits) -> np.ndarray:
    """Per-arm success probabilities for a single trait vector."""
    traits = np.asarray(traits, dtype=np.float64)
    if traits.ndim != 1:
        raise UsageError("predict_probs expects a single trait vector")
    return model.predict_proba(traits[None, :])[0]


def model_to_dict(model: NudgeResponseModel) -> dict:
    check_is_fitted(model, "estimators_")
    return {
        "format": MODEL_FORMAT,
        "config_hash": model.config_hash_,
        "config": asdict(model.train_config()),
        "n_arms": model.n_arms_,
        "n_features": model.n_features_in_,
        "columns": getattr(model, "columns_", None),
        "arms": [None if est is None else est.to_dict() for est in model.estimators_],
        "metadata": {
            "arm_counts": model.arm_counts_,
            "base_rate": model.base_rate_,
            "fallback_arms": model.fallback_arms_,
            "train_log_loss": model.train_log_loss_,
        },
    }


def model_from_dict(data: dict) -> NudgeResponseModel:
    try:
        if data.get("format") != MODEL_FORMAT:
            raise ParseError(f"unsupported model format {data.get('format')!r}", "format")
        config = TrainConfig(**data["config"])
        if config.config_hash() != data["config_hash"]:
            raise ParseError("stored config does not match its hash", "config_hash")
        model = NudgeResponseModel.from_config(config, n_arms=data["n_arms"])
        n_features = int(data["n_features"])
        params = {"max_depth": config.max_depth, "min_leaf": config.min_leaf,
                  "max_features": config.max_features}
        estimators = []
        for k, arm in enumerate(data["arms"]):
            if arm is None:
                estimators.append(None)
            elif arm["kind"] == "logistic":
                estimators.append(LogisticArm.from_dict(
                    arm, learning_rate=config.learning_rate, epochs=config.epochs, l2=config.l2))
            elif arm["kind"] == "forest":
                estimators.append(RandomForestArm.from_dict(
                    arm, n_features, n_trees=config.n_trees, **params))
            else:
                raise ParseError(f"unknown arm kind {arm['kind']!r}", f"arms[{k}].kind")
        meta = data["metadata"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed model document: {exc}") from None
    model.estimators_ = estimators
    model.n_arms_ = int(data["n_arms"])
    model.n_features_in_ = n_features
    model.config_hash_ = data["config_hash"]
    model.arm_counts_ = list(meta["arm_counts"])
    model.base_rate_ = float(meta["base_rate"])
    model.fallback_arms_ = list(meta["fallback_arms"])
    model.train_log_loss_ = list(meta["train_log_loss"])
    if data.get("columns") is not None:
        model.columns_ = list(data["columns"])
    return model


def save_model(model: NudgeResponseModel, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_model(path, expected: TrainConfig | None = None) -> NudgeResponseModel:
    """Load a model file; refuses it when its config hash differs from ``expected``."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"model file is not valid JSON: {exc}", str(path)) from None
    model = model_from_dict(data)
    if expected is not None and expected.config_hash() != model.config_hash_:
        raise ConfigurationError(
            f"model config hash {model.config_hash_[:12]} does not match the experiment "
            f"config hash {expected.config_hash()[:12]}"
        )
    return model

