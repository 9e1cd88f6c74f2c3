"""End-to-end experiment: trial, training, allocation, deployment and reporting."""

from __future__ import annotations

import logging
from contextlib import contextmanager

import numpy as np

from .. import evaluation as ev
from ..exceptions import NudgeLabError, StageError, UsageError
from ..learner import EpsilonGreedyBandit, NudgeResponseModel, train
from ..policy import AllocationPlan, allocate_oracle, allocate_personalized, allocate_uniform
from ..trial import Dataset, read_csv, run_rct, select_features, split
from .config import ExperimentConfig, derive_seed
from .prereg import PreregistrationManifest, verify
from .report import REPORT_SCHEMA_ID

log = logging.getLogger(__name__)


@contextmanager
def _stage(name, round_=None):
    try:
        yield
    except StageError:
        raise
    except (NudgeLabError, ValueError, LookupError, FloatingPointError) as exc:
        raise StageError(name, round_, exc) from exc


def _dominance_dict(result: ev.DominanceResult) -> dict:
    return {"dominates": result.dominates,
            "margins": {k: float(v) for k, v in result.margins.items()}}


def _apply_exclusions(dataset: Dataset, exclusions) -> Dataset:
    if not exclusions:
        return dataset
    drop = {(int(i), int(r)) for i, r in exclusions}
    keep = [k for k, (i, r) in enumerate(zip(dataset.ids, dataset.rounds))
            if (int(i), int(r)) not in drop]
    meta = dict(dataset.metadata, excluded_records=len(dataset) - len(keep))
    return dataset.subset(np.asarray(keep, dtype=np.int64), meta)


def _group_section(config: ExperimentConfig, dataset: Dataset, probs):
    ec = config.evaluation
    if ec.group_trait is None:
        return None
    if ec.group_trait not in dataset.columns:
        return {"trait": ec.group_trait, "skipped": "column removed by feature selection",
                "groups": [], "parity_gap": None}
    rep = ev.group_metrics(dataset, probs, ec.group_trait, ec.group_bins, ec.threshold)
    return {
        "trait": rep.trait,
        "groups": [{"low": g.low, "high": g.high, "n": g.n,
                    "metrics": None if g.metrics is None else g.metrics.to_dict()}
                   for g in rep.groups],
        "parity_gap": rep.parity_gap,
    }


class _PolicyArm:
    """One deployed policy with its own copy of the world and population."""

    def __init__(self, label, world, population):
        self.label = label
        self.world = world
        self.population = population


def run_experiment(config: ExperimentConfig,
                   manifest: PreregistrationManifest | None = None) -> dict:
    """Run the full pipeline and return the report document.

    With a manifest the config hash is checked before anything runs and again
    after the last round.
    """
    if manifest is not None:
        verify(config, manifest)
    seed = config.seed
    benefit = config.policy.benefit
    policy_cfg = config.policy_config()
    train_cfg = config.train_config()

    with _stage("world"):
        world = config.build_world()
        nudges = world.nudges
        costs = nudges.costs
        k = len(nudges)

    with _stage("trial"):
        rct_pop = world.generate_population(config.trial.population_size,
                                            derive_seed(seed, "population"))
        dataset = run_rct(world, rct_pop, config.trial.rounds, derive_seed(seed, "rct"))
        rct_meta = dict(dataset.metadata)
        if config.trial.preseed_dataset:
            preseed = read_csv(config.trial.preseed_dataset)
            if preseed.columns != dataset.columns:
                raise UsageError("preseeded dataset columns differ from the population encoding")
            dataset = preseed.concat(dataset)
        dataset = _apply_exclusions(dataset, config.trial.exclusions)

    with _stage("features"):
        reduced, removed = select_features(dataset, config.trial.correlation_threshold)
        features = reduced.columns
        train_set, test_set = split(reduced, config.trial.test_fraction, derive_seed(seed, "split"))

    start = config.trial.rounds
    with _stage("train", start):
        model = train(train_set, nudges, train_cfg)

    with _stage("evaluate", start):
        if len(test_set):
            own = model.predict_proba(test_set.traits)[np.arange(len(test_set)), test_set.nudges]
            metrics = ev.classification_metrics(own, test_set.outcomes,
                                                config.evaluation.threshold, test_set.nudges)
            metrics_doc = metrics.to_dict()
            group_doc = _group_section(config, test_set, own)
        else:
            metrics_doc, group_doc = None, None

        deploy_pop = world.generate_population(config.deployment.population_size,
                                               derive_seed(seed, "deployment"))
        truth = world.response_matrix(deploy_pop, start)
        plans = {"personalized": allocate_personalized(model, deploy_pop, policy_cfg)}
        for u in range(k):
            plans[f"uniform_{u}"] = allocate_uniform(u, deploy_pop, k)
        plans["oracle"] = allocate_oracle(world, deploy_pop, policy_cfg, start)
        reports = {lbl: ev.expected_utility(p, truth, benefit, costs) for lbl, p in plans.items()}
        uniforms = [reports[f"uniform_{u}"] for u in range(k)]
        initial = {
            "round": start,
            "metrics": metrics_doc,
            "group": group_doc,
            "policies": {
                lbl: {"expected_G": rep.total, "cost": rep.cost,
                      "harm_count": ev.harm_count(plans[lbl], truth, benefit, costs)}
                for lbl, rep in reports.items()
            },
            "dominance": _dominance_dict(ev.dominance_check(reports["personalized"], uniforms)),
            "oracle_dominance": _dominance_dict(ev.dominance_check(reports["oracle"], uniforms)),
        }

    labels = ["personalized", *(f"uniform_{u}" for u in range(k)), "oracle"]
    bandit = None
    bc = config.learner.bandit
    if bc.enabled:
        labels.append("bandit")
        bandit = EpsilonGreedyBandit(k, len(features), bc.epsilon, bc.learning_rate)
        if bc.warm_start:
            for x, u, y in zip(train_set.traits, train_set.nudges, train_set.outcomes):
                bandit.update(x, int(u), int(y))
    arms = {lbl: _PolicyArm(lbl, world.clone(), deploy_pop.copy()) for lbl in labels}
    feature_idx = [deploy_pop.columns.index(c) for c in features]

    learned = train_set
    rounds = []
    losses = []
    for t in range(config.deployment.rounds):
        r = start + t
        with _stage("deploy", r):
            row = {"round": r, "policies": {}}
            expected, realized = {}, {}
            for lbl in labels:
                arm = arms[lbl]
                truth = arm.world.response_matrix(arm.population, r)
                if lbl == "personalized":
                    plan = allocate_personalized(model, arm.population, policy_cfg)
                elif lbl == "oracle":
                    plan = allocate_oracle(arm.world, arm.population, policy_cfg, r)
                elif lbl == "bandit":
                    rng = np.random.default_rng([derive_seed(seed, "bandit"), r])
                    X = arm.population.traits[:, feature_idx]
                    choice = [bandit.choose(x, rng) for x in X]
                    plan = AllocationPlan("bandit", arm.population.ids, choice,
                                          np.array([bandit.predict(x) for x in X]))
                else:
                    plan = allocate_uniform(int(lbl.split("_")[1]), arm.population, k)
                expected[lbl] = ev.expected_utility(plan, truth, benefit, costs)
                harm = ev.harm_count(plan, truth, benefit, costs)
                realized[lbl] = ev.realized_utility(plan, arm.world, arm.population, r,
                                                    benefit, costs)
                row["policies"][lbl] = {
                    "expected_G": expected[lbl].total,
                    "realized_G": realized[lbl].total,
                    "cost": realized[lbl].cost,
                    "successes": realized[lbl].successes,
                    "harm_count": harm,
                }
                y = realized[lbl].outcomes
                if lbl == "bandit":
                    for x, u, yi in zip(X, plan.decisions, y):
                        bandit.update(x, int(u), int(yi))
                if lbl == "personalized":
                    X_p = arm.population.traits[:, feature_idx]
                    loss = model.arm_log_loss(X_p, y, plan.decisions)
                    losses.append(loss)
                    row["log_loss"] = loss
                    new = Dataset(features, arm.population.ids, np.full(len(y), r), X_p,
                                  plan.decisions, y)
                    learned = learned.concat(new)
            uni = [expected[f"uniform_{u}"] for u in range(k)]
            row["dominance"] = _dominance_dict(ev.dominance_check(expected["personalized"], uni))
            row["realized_dominance"] = _dominance_dict(ev.dominance_check(
                realized["personalized"], [realized[f"uniform_{u}"] for u in range(k)]))
            for arm in arms.values():
                arm.world.advance_drift(t + 1)

        every = config.deployment.retrain_every
        row["retrained"] = False
        if every and (t + 1) % every == 0 and t + 1 < config.deployment.rounds:
            with _stage("retrain", r):
                usable = learned.subset(np.flatnonzero(learned.rounds <= r))
                model = train(usable, nudges, train_cfg)
                row["retrained"] = True
                row["training_records"] = len(usable)
                row["max_training_round"] = int(usable.rounds.max())
        rounds.append(row)
        log.info("round %d: personalized expected G %.3f", r,
                 row["policies"]["personalized"]["expected_G"])

    with _stage("report"):
        w, ratio = config.deployment.decay_window, config.deployment.decay_ratio
        alarms = ev.decay_monitor(losses, w, ratio)
        verdicts = [row["dominance"]["dominates"] for row in rounds]
        if manifest is not None:
            verify(config, manifest)

    return {
        "schema": REPORT_SCHEMA_ID,
        "problem_id": config.problem_id,
        "seed": seed,
        "manifest_hash": config.content_hash(),
        "preregistered": manifest is not None,
        "arms": nudges.labels,
        "policies": labels,
        "trial": {
            "records": len(dataset),
            "arm_counts": dataset.arm_counts(k),
            "train_records": len(train_set),
            "test_records": len(test_set),
            "removed_columns": removed,
            "zero_variance_columns": reduced.metadata.get("zero_variance_columns", []),
            "warnings": rct_meta.get("warnings", []),
        },
        "model": {
            "kind": train_cfg.kind,
            "config_hash": train_cfg.config_hash(),
            "features": features,
            "fallback_arms": model.fallback_arms_,
        },
        "initial": initial,
        "rounds": rounds,
        "decay_alarms": alarms,
        "parity_gaps": {"initial": None if group_doc is None else group_doc["parity_gap"]},
        "harm_counts": {lbl: [row["policies"][lbl]["harm_count"] for row in rounds]
                        for lbl in labels},
        "final_verdict": {
            "dominates": all(verdicts) if verdicts else initial["dominance"]["dominates"],
            "rounds_dominated": int(sum(verdicts)),
            "rounds_total": len(verdicts),
        },
    }


def evaluate_policies(model: NudgeResponseModel, config: ExperimentConfig, population,
                      round_: int = 0) -> dict:
    """Expected utilities of the standard policies on ``population`` at ``round_``."""
    world = config.build_world()
    k = world.n_arms
    costs = world.nudges.costs
    truth = world.response_matrix(population, round_)
    policy_cfg = config.policy_config()
    plans = {"personalized": allocate_personalized(model, population, policy_cfg)}
    for u in range(k):
        plans[f"uniform_{u}"] = allocate_uniform(u, population, k)
    plans["oracle"] = allocate_oracle(world, population, policy_cfg, round_)
    return {
        lbl: ev.expected_utility(p, truth, config.policy.benefit, costs)
        for lbl, p in plans.items()
    }
