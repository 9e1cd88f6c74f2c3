"""Report documents: JSON with a fixed schema, plus a flat CSV for plotting."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import jsonschema

from ..exceptions import ParseError

REPORT_SCHEMA_ID = "nudgelab-report/1"

_number = {"type": "number"}
_margins = {"type": "object", "additionalProperties": _number}
_dominance = {
    "type": "object",
    "required": ["dominates", "margins"],
    "properties": {"dominates": {"type": "boolean"}, "margins": _margins},
}
_initial_policy = {
    "type": "object",
    "required": ["expected_G", "cost", "harm_count"],
    "properties": {"expected_G": _number, "cost": _number,
                   "harm_count": {"type": "integer", "minimum": 0}},
}
_round_policy = {
    "type": "object",
    "required": ["expected_G", "realized_G", "cost", "successes", "harm_count"],
    "properties": {
        "expected_G": _number, "realized_G": _number, "cost": _number,
        "successes": {"type": "integer", "minimum": 0},
        "harm_count": {"type": "integer", "minimum": 0},
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema", "problem_id", "seed", "manifest_hash", "preregistered", "arms",
                 "policies", "trial", "model", "initial", "rounds", "decay_alarms",
                 "parity_gaps", "harm_counts", "final_verdict"],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_ID},
        "problem_id": {"type": "string"},
        "seed": {"type": "integer"},
        "manifest_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "preregistered": {"type": "boolean"},
        "arms": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "policies": {"type": "array", "items": {"type": "string"}},
        "trial": {
            "type": "object",
            "required": ["records", "arm_counts", "train_records", "test_records",
                         "removed_columns", "zero_variance_columns", "warnings"],
        },
        "model": {"type": "object", "required": ["kind", "config_hash", "features"]},
        "initial": {
            "type": "object",
            "required": ["round", "metrics", "group", "policies", "dominance",
                         "oracle_dominance"],
            "properties": {
                "round": {"type": "integer"},
                "policies": {"type": "object", "additionalProperties": _initial_policy},
                "dominance": _dominance,
                "oracle_dominance": _dominance,
            },
        },
        "rounds": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["round", "policies", "dominance", "realized_dominance",
                             "log_loss", "retrained"],
                "properties": {
                    "round": {"type": "integer"},
                    "policies": {"type": "object", "additionalProperties": _round_policy},
                    "dominance": _dominance,
                    "realized_dominance": _dominance,
                    "log_loss": _number,
                    "retrained": {"type": "boolean"},
                },
            },
        },
        "decay_alarms": {"type": "array", "items": {"type": "boolean"}},
        "parity_gaps": {"type": "object"},
        "harm_counts": {"type": "object",
                        "additionalProperties": {"type": "array", "items": {"type": "integer"}}},
        "final_verdict": {
            "type": "object",
            "required": ["dominates", "rounds_dominated", "rounds_total"],
        },
    },
}


def validate_report(report: dict):
    try:
        jsonschema.validate(report, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParseError(exc.message, where) from None


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def report_write(report: dict, path):
    validate_report(report)
    Path(path).write_text(dumps_report(report), encoding="utf-8")


def report_read(path) -> dict:
    try:
        report = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"report is not valid JSON: {exc.msg}", f"line {exc.lineno}") from None
    validate_report(report)
    return report


UTILITY_COLUMNS = ("round", "policy", "expected_G", "realized_G", "cost", "harm_count")


def utility_rows(report: dict):
    init = report["initial"]
    for label, rec in init["policies"].items():
        yield [init["round"], label, rec["expected_G"], "", rec["cost"], rec["harm_count"]]
    for row in report["rounds"]:
        for label in report["policies"]:
            rec = row["policies"][label]
            yield [row["round"], label, rec["expected_G"], rec["realized_G"], rec["cost"],
                   rec["harm_count"]]


def write_utility_table(report: dict, path):
    """``round,policy,expected_G,realized_G,cost,harm_count``; initial rows lack realized_G."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(UTILITY_COLUMNS)
        for r in utility_rows(report):
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
