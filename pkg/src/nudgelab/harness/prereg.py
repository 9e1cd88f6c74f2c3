"""Preregistration: freeze the config by content hash before any data exists."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from ..exceptions import ParseError, PreregistrationError
from .config import ExperimentConfig

REPORTED_METRICS = ("accuracy", "confusion_matrix", "log_loss", "precision", "recall", "f1",
                    "expected_utility", "realized_utility", "harm_count", "parity_gap")


@dataclass(frozen=True)
class PreregistrationManifest:
    config_hash: str
    problem_id: str
    methods: tuple
    created: str
    frozen: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d


def method_identifiers(config: ExperimentConfig) -> list[str]:
    ln = config.learner
    methods = [f"learner:{ln.kind}", f"policy:{config.policy.scoring}",
               f"cutoff:{config.policy.cutoff!r}"]
    if ln.bandit.enabled:
        methods.append(f"bandit:epsilon={ln.bandit.epsilon!r}")
    methods += [f"metric:{m}" for m in REPORTED_METRICS]
    return methods


def preregister(config: ExperimentConfig, path=None, created: str | None = None):
    """Hash the canonical config and, if ``path`` is given, write the manifest there."""
    if created is None:
        created = datetime.now(timezone.utc).replace(microsecond=0).isoformat()
    manifest = PreregistrationManifest(config.content_hash(), config.problem_id,
                                       tuple(method_identifiers(config)), created)
    if path is not None:
        write_manifest(manifest, path)
    return manifest


def write_manifest(manifest: PreregistrationManifest, path):
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_manifest(path) -> PreregistrationManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return PreregistrationManifest(str(data["config_hash"]), str(data["problem_id"]),
                                       tuple(data["methods"]), str(data["created"]),
                                       bool(data.get("frozen", True)))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"unreadable manifest: {exc}", str(path)) from None


def verify(config: ExperimentConfig, manifest: PreregistrationManifest):
    actual = config.content_hash()
    if actual != manifest.config_hash:
        raise PreregistrationError(
            f"config hash {actual[:16]} does not match preregistered {manifest.config_hash[:16]}"
        )
    if list(manifest.methods) != method_identifiers(config):
        raise PreregistrationError("preregistered methods differ from the configured methods")
