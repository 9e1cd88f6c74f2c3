"""Experiment configuration: schema, loading and conversion to domain objects.

Config files are YAML (JSON also parses). Top-level keys::

    problem_id   free-text label of the problem being optimized
    seed         master seed; every random stream derives from it
    world        population_size, gamma, traits, nudges, response
    trial        population_size, rounds, test_fraction,
                 correlation_threshold, exclusions, preseed_dataset
    learner      kind, learning_rate, epochs, l2, n_trees, max_depth,
                 min_leaf, max_features, bandit{enabled, epsilon,
                 learning_rate, warm_start}
    policy       scoring (raw|net), cutoff, benefit
    deployment   population_size, rounds, retrain_every, decay_window,
                 decay_ratio
    evaluation   threshold, group_trait, group_bins

Each ``world.traits`` entry has ``name`` and ``kind`` (continuous: ``mean``,
``std``; binary: ``rate``; categorical: ``weights``, ``categories``). Each
``world.nudges`` entry has a ``label`` and a ``cost``; the no-nudge arm is
implicit and always free.

``world.response`` maps each nudge label (including ``none``) to an
``intercept``, a ``coefficients`` mapping keyed by encoded column name and an
optional ``drift`` block of the same shape giving the per-round shift.
Categorical traits encode to one column per category, ``<name>_<category>``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..exceptions import ConfigurationError
from ..learner import TrainConfig
from ..policy import PolicyConfig
from ..world import GroundTruthResponse, NudgeSet, TraitSpec, World, encoded_columns


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TraitConfig(_Section):
    name: str = Field(min_length=1)
    kind: Literal["continuous", "binary", "categorical"]
    mean: float = 0.0
    std: float = Field(1.0, ge=0)
    rate: float = Field(0.5, ge=0, le=1)
    weights: Optional[list[float]] = None
    categories: Optional[list[str]] = None

    def to_spec(self) -> TraitSpec:
        if self.kind == "continuous":
            params = {"mean": self.mean, "std": self.std}
        elif self.kind == "binary":
            params = {"rate": self.rate}
        else:
            params = {"weights": list(self.weights or []), "categories": self.categories}
        return TraitSpec(self.name, self.kind, params)


class NudgeConfig(_Section):
    label: str = Field(min_length=1)
    cost: float = Field(0.0, ge=0)


class DriftConfig(_Section):
    intercept: float = 0.0
    coefficients: dict[str, float] = Field(default_factory=dict)


class ArmResponseConfig(_Section):
    intercept: float = 0.0
    coefficients: dict[str, float] = Field(default_factory=dict)
    drift: DriftConfig = Field(default_factory=DriftConfig)


class WorldConfig(_Section):
    population_size: int = Field(1000, ge=0)
    gamma: float = Field(1.0, gt=0, le=1)
    traits: list[TraitConfig] = Field(min_length=1)
    nudges: list[NudgeConfig] = Field(min_length=1)
    response: dict[str, ArmResponseConfig]

    @model_validator(mode="after")
    def _check_response(self):
        labels = ["none"] + [n.label for n in self.nudges]
        if len(set(labels)) != len(labels):
            raise ValueError(f"nudge labels must be unique and not 'none': {labels[1:]}")
        missing = [lbl for lbl in labels if lbl not in self.response]
        extra = [lbl for lbl in self.response if lbl not in labels]
        if missing or extra:
            raise ValueError(f"response labels mismatch: missing {missing}, unknown {extra}")
        try:
            columns = encoded_columns([t.to_spec() for t in self.traits])
        except ConfigurationError as exc:
            raise ValueError(str(exc)) from None
        for lbl, arm in self.response.items():
            for key in list(arm.coefficients) + list(arm.drift.coefficients):
                if key not in columns:
                    raise ValueError(f"response[{lbl}] names unknown column {key!r}; "
                                     f"known columns are {columns}")
        return self


class TrialConfig(_Section):
    population_size: int = Field(1000, ge=1)
    rounds: int = Field(1, ge=1)
    test_fraction: float = Field(0.2, gt=0, lt=1)
    correlation_threshold: float = Field(0.95, gt=0, le=1)
    exclusions: list[tuple[int, int]] = Field(default_factory=list)
    preseed_dataset: Optional[str] = None


class BanditConfig(_Section):
    enabled: bool = False
    epsilon: float = Field(0.1, ge=0, le=1)
    learning_rate: float = Field(0.1, gt=0)
    warm_start: bool = True


class LearnerConfig(_Section):
    kind: Literal["logistic", "forest"] = "logistic"
    learning_rate: float = Field(0.5, gt=0)
    epochs: int = Field(300, ge=0)
    l2: float = Field(0.0, ge=0)
    n_trees: int = Field(25, ge=1)
    max_depth: int = Field(4, ge=1)
    min_leaf: int = Field(5, ge=1)
    max_features: Optional[int] = Field(None, ge=1)
    bandit: BanditConfig = Field(default_factory=BanditConfig)


class PolicySection(_Section):
    scoring: Literal["raw", "net"] = "raw"
    cutoff: float = Field(0.0, ge=0, le=1)
    benefit: float = Field(1.0, gt=0)


class DeploymentConfig(_Section):
    population_size: int = Field(1000, ge=1)
    rounds: int = Field(0, ge=0)
    retrain_every: int = Field(0, ge=0)
    decay_window: int = Field(2, ge=2)
    decay_ratio: float = Field(1.5, gt=1)


class EvaluationConfig(_Section):
    threshold: float = Field(0.5, gt=0, lt=1)
    group_trait: Optional[str] = None
    group_bins: Optional[list[float]] = None

    @model_validator(mode="after")
    def _check_bins(self):
        if (self.group_trait is None) != (self.group_bins is None):
            raise ValueError("group_trait and group_bins must be given together")
        if self.group_bins is not None:
            edges = self.group_bins
            if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError("group_bins must be >= 2 strictly increasing edges")
        return self


class ExperimentConfig(_Section):
    problem_id: str = Field(min_length=1)
    seed: int
    world: WorldConfig
    trial: TrialConfig = Field(default_factory=TrialConfig)
    learner: LearnerConfig = Field(default_factory=LearnerConfig)
    policy: PolicySection = Field(default_factory=PolicySection)
    deployment: DeploymentConfig = Field(default_factory=DeploymentConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

    @model_validator(mode="after")
    def _check_cross(self):
        columns = encoded_columns([t.to_spec() for t in self.world.traits])
        if self.evaluation.group_trait is not None and self.evaluation.group_trait not in columns:
            raise ValueError(f"evaluation.group_trait {self.evaluation.group_trait!r} "
                             f"is not one of {columns}")
        mf = self.learner.max_features
        if mf is not None and mf > len(columns):
            raise ValueError(f"learner.max_features={mf} exceeds trait dimension {len(columns)}")
        return self

    # -- canonical form --------------------------------------------------

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.model_validate({**self.model_dump(mode="json"), "seed": int(seed)})

    # -- domain objects --------------------------------------------------

    def trait_specs(self) -> list[TraitSpec]:
        return [t.to_spec() for t in self.world.traits]

    def nudge_set(self) -> NudgeSet:
        return NudgeSet.from_costs([(n.label, n.cost) for n in self.world.nudges])

    def build_world(self) -> World:
        specs = self.trait_specs()
        columns = encoded_columns(specs)
        nudges = self.nudge_set()
        k, m = len(nudges), len(columns)
        a, b = np.zeros(k), np.zeros((k, m))
        da, db = np.zeros(k), np.zeros((k, m))
        for u, label in enumerate(nudges.labels):
            arm = self.world.response[label]
            a[u], da[u] = arm.intercept, arm.drift.intercept
            for col, v in arm.coefficients.items():
                b[u, columns.index(col)] = v
            for col, v in arm.drift.coefficients.items():
                db[u, columns.index(col)] = v
        response = GroundTruthResponse(a, b, self.world.gamma, da, db)
        return World(specs, nudges, response, seed=self.seed)

    def train_config(self) -> TrainConfig:
        ln = self.learner
        return TrainConfig(ln.kind, ln.learning_rate, ln.epochs, ln.l2, ln.n_trees,
                           ln.max_depth, ln.min_leaf, ln.max_features,
                           derive_seed(self.seed, "train"))

    def policy_config(self) -> PolicyConfig:
        p = self.policy
        return PolicyConfig(p.scoring, p.cutoff, p.benefit, tuple(self.nudge_set().costs))


_TAGS = {"population": 1, "rct": 2, "split": 3, "train": 4, "deployment": 5, "bandit": 6}


def derive_seed(seed: int, tag: str) -> int:
    """Independent, reproducible child seed for one pipeline stage."""
    state = np.random.SeedSequence([int(seed), _TAGS[tag]]).generate_state(1)
    return int(state[0])


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(part) for part in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid configuration:\n  " + "\n  ".join(lines)


def parse_config(data) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_validation(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must be a mapping at the top level")
    return parse_config(data)
