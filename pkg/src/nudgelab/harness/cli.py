"""Command line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data or parse
error, 3 preregistration mismatch.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import click
import numpy as np

from .. import evaluation as ev
from ..exceptions import (
    ConfigurationError,
    ParseError,
    PreregistrationError,
    StageError,
    TrainingError,
    UnsupportedOperationError,
    UsageError,
)
from ..learner import explain as explain_prediction
from ..learner import load_model, save_model, train
from ..policy import (
    allocate_oracle,
    allocate_personalized,
    allocate_uniform,
    write_plan_csv,
)
from ..trial import read_csv, run_rct, select_features, write_csv
from .config import ExperimentConfig, derive_seed, load_config
from .experiment import run_experiment
from .prereg import preregister, read_manifest
from .report import report_write, write_utility_table

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PREREG = 0, 1, 2, 3


@dataclass
class _State:
    config_path: str | None
    seed: int | None
    out: Path
    quiet: bool

    def config(self) -> ExperimentConfig:
        if not self.config_path:
            raise click.UsageError("--config is required for this command")
        cfg = load_config(self.config_path)
        return cfg if self.seed is None else cfg.with_seed(self.seed)

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def say(self, msg: str):
        if not self.quiet:
            click.echo(msg)


def _existing(state: _State, given, *defaults) -> Path:
    if given:
        return Path(given)
    for name in defaults:
        if (state.out / name).exists():
            return state.out / name
    raise click.UsageError(f"no input given and none of {defaults} exist in {state.out}")


def _write_population(pop, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *pop.columns])
        for i, x in zip(pop.ids, pop.traits):
            w.writerow([int(i), *(repr(float(v)) for v in x)])


def _deployment_population(cfg: ExperimentConfig):
    world = cfg.build_world()
    pop = world.generate_population(cfg.deployment.population_size, derive_seed(cfg.seed, "deployment"))
    return world, pop


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Experiment configuration file (YAML).")
@click.option("--seed", type=int, default=None, help="Override the config's master seed.")
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True,
              help="Output directory.")
@click.option("--quiet", is_flag=True, help="Only print errors.")
@click.pass_context
def cli(ctx, config_path, seed, out, quiet):
    """Simulate, learn and evaluate personalized nudge allocation."""
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = _State(config_path, seed, Path(out), quiet)


@cli.command()
@click.option("--phase", type=click.Choice(["trial", "deployment"]), default="trial",
              show_default=True, help="Which seeded population to draw.")
@click.pass_obj
def gen(state: _State, phase):
    """Generate a population CSV."""
    cfg = state.config()
    world = cfg.build_world()
    if phase == "trial":
        pop = world.generate_population(cfg.trial.population_size, derive_seed(cfg.seed, "population"))
    else:
        pop = world.generate_population(cfg.deployment.population_size,
                                        derive_seed(cfg.seed, "deployment"))
    path = state.path("population.csv")
    _write_population(pop, path)
    state.say(f"wrote {len(pop)} individuals to {path}")


@cli.command()
@click.pass_obj
def rct(state: _State):
    """Run the randomized trial and write the dataset CSV."""
    cfg = state.config()
    world = cfg.build_world()
    pop = world.generate_population(cfg.trial.population_size, derive_seed(cfg.seed, "population"))
    ds = run_rct(world, pop, cfg.trial.rounds, derive_seed(cfg.seed, "rct"))
    path = state.path("rct.csv")
    write_csv(ds, path)
    state.say(f"wrote {len(ds)} records to {path} (arm counts {ds.arm_counts(world.n_arms)})")


@cli.command()
@click.option("--data", type=click.Path(dir_okay=False), default=None)
@click.option("--threshold", type=float, default=None, help="Override the correlation threshold.")
@click.pass_obj
def features(state: _State, data, threshold):
    """Remove co-linear trait columns from a dataset."""
    cfg = state.config()
    ds = read_csv(_existing(state, data, "rct.csv"))
    rho = cfg.trial.correlation_threshold if threshold is None else threshold
    reduced, removed = select_features(ds, rho)
    path = state.path("features.csv")
    write_csv(reduced, path)
    state.say(f"removed columns: {', '.join(removed) or '(none)'}; wrote {path}")


@cli.command("train")
@click.option("--data", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def train_cmd(state: _State, data):
    """Train the per-arm response model and write the model file."""
    cfg = state.config()
    ds = read_csv(_existing(state, data, "features.csv", "rct.csv"))
    model = train(ds, cfg.nudge_set(), cfg.train_config())
    path = state.path("model.json")
    save_model(model, path)
    state.say(f"trained {cfg.learner.kind} model on {len(ds)} records; wrote {path}")


@cli.command()
@click.option("--model", "model_path", type=click.Path(dir_okay=False), default=None)
@click.option("--policy", default="personalized", show_default=True,
              help="personalized, oracle or uniform:<nudge id>.")
@click.pass_obj
def allocate(state: _State, model_path, policy):
    """Allocate nudges to the deployment population and write the plan CSV."""
    cfg = state.config()
    world, pop = _deployment_population(cfg)
    if policy == "personalized":
        model = load_model(_existing(state, model_path, "model.json"), cfg.train_config())
        plan = allocate_personalized(model, pop, cfg.policy_config())
    elif policy == "oracle":
        plan = allocate_oracle(world, pop, cfg.policy_config(), cfg.trial.rounds)
    elif policy.startswith("uniform:"):
        try:
            u = int(policy.split(":", 1)[1])
        except ValueError:
            raise click.UsageError(f"bad uniform policy {policy!r}") from None
        plan = allocate_uniform(u, pop, world.n_arms)
    else:
        raise click.UsageError(f"unknown policy {policy!r}")
    path = state.path("plan.csv")
    write_plan_csv(plan, path)
    counts = np.bincount(plan.decisions, minlength=world.n_arms).tolist()
    state.say(f"wrote {plan.label} plan to {path} (decision counts {counts})")


@cli.command()
@click.option("--model", "model_path", type=click.Path(dir_okay=False), default=None)
@click.option("--data", type=click.Path(dir_okay=False), default=None,
              help="Labelled records to score the model on.")
@click.pass_obj
def evaluate(state: _State, model_path, data):
    """Expected utility of every policy, dominance verdict and model metrics."""
    cfg = state.config()
    model = load_model(_existing(state, model_path, "model.json"), cfg.train_config())
    world, pop = _deployment_population(cfg)
    r = cfg.trial.rounds
    truth = world.response_matrix(pop, r)
    costs, b = world.nudges.costs, cfg.policy.benefit
    plans = {"personalized": allocate_personalized(model, pop, cfg.policy_config())}
    plans.update({f"uniform_{u}": allocate_uniform(u, pop, world.n_arms)
                  for u in range(world.n_arms)})
    plans["oracle"] = allocate_oracle(world, pop, cfg.policy_config(), r)
    reports = {lbl: ev.expected_utility(p, truth, b, costs) for lbl, p in plans.items()}
    dom = ev.dominance_check(reports["personalized"],
                             [reports[f"uniform_{u}"] for u in range(world.n_arms)])
    doc = {
        "round": r,
        "policies": {lbl: {"expected_G": rep.total, "cost": rep.cost,
                           "harm_count": ev.harm_count(plans[lbl], truth, b, costs)}
                     for lbl, rep in reports.items()},
        "dominance": {"dominates": dom.dominates, "margins": dom.margins},
        "metrics": None,
    }
    if data:
        ds = read_csv(data)
        if getattr(model, "columns_", None) and ds.columns != model.columns_:
            ds = ds.select_columns(model.columns_)
        own = model.predict_proba(ds.traits)[np.arange(len(ds)), ds.nudges]
        doc["metrics"] = ev.classification_metrics(own, ds.outcomes, cfg.evaluation.threshold,
                                                   ds.nudges).to_dict()
    path = state.path("evaluation.json")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with state.path("evaluation.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "policy", "expected_G", "realized_G", "cost", "harm_count"])
        for lbl, rec in doc["policies"].items():
            w.writerow([r, lbl, repr(rec["expected_G"]), "", repr(rec["cost"]), rec["harm_count"]])
    state.say(f"personalized dominates every uniform policy: {dom.dominates}; wrote {path}")


@cli.command()
@click.pass_obj
def prereg(state: _State):
    """Freeze the configuration into a preregistration manifest."""
    cfg = state.config()
    path = state.path("manifest.json")
    manifest = preregister(cfg, path)
    state.say(f"config hash {manifest.config_hash}; wrote {path}")


@cli.command()
@click.option("--manifest", "manifest_path", type=click.Path(dir_okay=False), default=None,
              help="Run in preregistered mode against this manifest.")
@click.pass_obj
def run(state: _State, manifest_path):
    """Run the full experiment and write report.json and utility.csv."""
    cfg = state.config()
    manifest = read_manifest(manifest_path) if manifest_path else None
    report = run_experiment(cfg, manifest)
    path = state.path("report.json")
    report_write(report, path)
    write_utility_table(report, state.path("utility.csv"))
    verdict = report["final_verdict"]
    state.say(f"dominates: {verdict['dominates']} "
              f"({verdict['rounds_dominated']}/{verdict['rounds_total']} rounds); wrote {path}")


@cli.command("explain")
@click.option("--model", "model_path", type=click.Path(dir_okay=False), default=None)
@click.option("--ids", default="0", show_default=True, help="Comma-separated individual ids.")
@click.option("--arm", type=int, default=None, help="Arm to explain (default: allocated arm).")
@click.option("--samples", type=int, default=500, show_default=True)
@click.option("--kernel-width", type=float, default=None)
@click.pass_obj
def explain_cmd(state: _State, model_path, ids, arm, samples, kernel_width):
    """Local surrogate explanation table for deployment individuals."""
    cfg = state.config()
    model = load_model(_existing(state, model_path, "model.json"), cfg.train_config())
    _, pop = _deployment_population(cfg)
    columns = getattr(model, "columns_", None) or pop.columns
    idx = [pop.columns.index(c) for c in columns]
    plan = allocate_personalized(model, pop, cfg.policy_config())
    try:
        wanted = [int(s) for s in ids.split(",") if s.strip()]
        rows = [pop.index_of(i) for i in wanted]
    except (ValueError, KeyError) as exc:
        raise click.UsageError(f"bad --ids: {exc}") from None
    path = state.path("explanations.csv")
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "arm", "intercept", "fidelity", "regularized", *columns])
        for i, row in zip(wanted, rows):
            u = int(plan.decisions[row]) if arm is None else arm
            if not 0 <= u < model.n_arms_:
                raise click.UsageError(f"unknown arm {u}")
            e = explain_prediction(model, pop.traits[row, idx], u, samples, kernel_width,
                                   seed=derive_seed(cfg.seed, "train") + i)
            w.writerow([i, u, repr(e.intercept), repr(e.fidelity), int(e.regularized),
                        *(repr(float(c)) for c in e.contributions)])
    state.say(f"wrote {len(rows)} explanations to {path}")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, PreregistrationError):
        return EXIT_PREREG
    if isinstance(exc, (ParseError, TrainingError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (ConfigurationError, UsageError, UnsupportedOperationError,
                        click.UsageError, click.BadParameter, LookupError)):
        return EXIT_USAGE
    return EXIT_DATA


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="nudgelab", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        code = _exit_code(exc)
        if code == EXIT_DATA and not isinstance(
                exc, (ParseError, TrainingError, OSError, StageError)):
            raise
        click.echo(f"error: {exc}", err=True)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
