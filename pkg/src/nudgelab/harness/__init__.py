"""Experiment orchestration: configuration, preregistration, runs and reports."""

from .config import ExperimentConfig, derive_seed, load_config, parse_config
from .experiment import run_experiment
from .prereg import PreregistrationManifest, preregister, read_manifest, verify, write_manifest
from .report import report_read, report_write, write_utility_table

__all__ = [
    "ExperimentConfig",
    "PreregistrationManifest",
    "derive_seed",
    "load_config",
    "parse_config",
    "preregister",
    "read_manifest",
    "report_read",
    "report_write",
    "run_experiment",
    "verify",
    "write_manifest",
    "write_utility_table",
]
