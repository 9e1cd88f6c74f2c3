"""Randomized trials, training datasets and their on-disk CSV format."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigurationError, ParseError, UsageError
from .world import Population, World

FIXED_LEADING = ("id", "round")
FIXED_TRAILING = ("nudge", "outcome")


@dataclass(frozen=True)
class TrialRecord:
    individual_id: int
    traits: tuple
    nudge: int
    outcome: int
    round: int


class Dataset:
    """Columnar store of trial records ``(traits, nudge) -> outcome``.

    Arrays are read-only after construction; operations return new datasets.
    ``metadata`` carries bookkeeping such as arm counts and removed columns.
    """

    def __init__(self, columns: Sequence[str], ids, rounds, traits, nudges, outcomes,
                 metadata: dict | None = None):
        self.columns = list(columns)
        reserved = set(FIXED_LEADING + FIXED_TRAILING)
        if len(set(self.columns)) != len(self.columns) or reserved & set(self.columns):
            raise UsageError(f"schema column names must be unique and not reserved: {self.columns}")
        self.ids = np.array(ids, dtype=np.int64).ravel()
        n = self.ids.size
        self.rounds = np.array(rounds, dtype=np.int64).ravel()
        self.traits = np.array(traits, dtype=np.float64).reshape(n, len(self.columns))
        self.nudges = np.array(nudges, dtype=np.int64).ravel()
        self.outcomes = np.array(outcomes, dtype=np.int64).ravel()
        if not (self.rounds.size == self.nudges.size == self.outcomes.size == n):
            raise UsageError("record fields have mismatched lengths")
        if n and self.nudges.min() < 0:
            raise UsageError("nudge ids must be >= 0")
        if not np.isin(self.outcomes, (0, 1)).all():
            raise UsageError("outcomes must be 0 or 1")
        for arr in (self.ids, self.rounds, self.traits, self.nudges, self.outcomes):
            arr.setflags(write=False)
        self.metadata = dict(metadata or {})

    @classmethod
    def empty(cls, columns: Sequence[str], metadata=None) -> "Dataset":
        return cls(columns, [], [], np.zeros((0, len(columns))), [], [], metadata)

    @classmethod
    def from_records(cls, columns, records: Sequence[TrialRecord], metadata=None) -> "Dataset":
        if not records:
            return cls.empty(columns, metadata)
        return cls(
            columns,
            [r.individual_id for r in records],
            [r.round for r in records],
            [r.traits for r in records],
            [r.nudge for r in records],
            [r.outcome for r in records],
            metadata,
        )

    def __len__(self):
        return self.ids.size

    @property
    def records(self) -> list[TrialRecord]:
        return [
            TrialRecord(int(i), tuple(x.tolist()), int(u), int(y), int(r))
            for i, x, u, y, r in zip(self.ids, self.traits, self.nudges, self.outcomes, self.rounds)
        ]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.columns == other.columns
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.rounds, other.rounds)
            and np.array_equal(self.traits, other.traits)
            and np.array_equal(self.nudges, other.nudges)
            and np.array_equal(self.outcomes, other.outcomes)
        )

    def __repr__(self):
        return f"Dataset(n={len(self)}, columns={self.columns})"

    def arm_counts(self, n_arms: int | None = None) -> list[int]:
        size = n_arms if n_arms is not None else (int(self.nudges.max()) + 1 if len(self) else 0)
        return np.bincount(self.nudges, minlength=size).tolist()

    def subset(self, rows, metadata=None) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.columns, self.ids[rows], self.rounds[rows], self.traits[rows],
                       self.nudges[rows], self.outcomes[rows],
                       self.metadata if metadata is None else metadata)

    def select_columns(self, names: Sequence[str], metadata=None) -> "Dataset":
        idx = [self.columns.index(c) for c in names]
        return Dataset(names, self.ids, self.rounds, self.traits[:, idx], self.nudges,
                       self.outcomes, self.metadata if metadata is None else metadata)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.columns != self.columns:
            raise UsageError(f"cannot concatenate schemas {self.columns} and {other.columns}")
        return Dataset(
            self.columns,
            np.concatenate([self.ids, other.ids]),
            np.concatenate([self.rounds, other.rounds]),
            np.vstack([self.traits, other.traits]),
            np.concatenate([self.nudges, other.nudges]),
            np.concatenate([self.outcomes, other.outcomes]),
            self.metadata,
        )


def run_rct(world: World, population: Population, rounds: int = 1, seed: int = 0,
            start_round: int = 0) -> Dataset:
    """Simulate a balanced randomized trial over every arm of ``world``.

    In each round the population is shuffled and dealt to the arms in turn,
    so arm sizes differ by at most one and arm 0 is the control group.
    Outcomes are drawn through :meth:`World.sample_outcome`, which also
    accrues exposure for nudged individuals.
    """
    if len(population) == 0:
        raise UsageError("cannot run a trial on an empty population")
    k = world.n_arms
    meta = {"n_arms": k, "rounds": rounds, "warnings": []}
    if len(population) < k:
        meta["warnings"].append(
            f"population of {len(population)} is smaller than the {k} trial arms"
        )
    blocks = []
    for r in range(start_round, start_round + rounds):
        rng = np.random.default_rng([seed, r])
        order = rng.permutation(len(population))
        arms = np.empty(len(population), dtype=np.int64)
        arms[order] = np.arange(len(population)) % k
        y = world.sample_outcomes(population, arms, r)
        blocks.append((population.ids, np.full(len(population), r), population.traits, arms, y))
    ids, rnds, traits, arms, ys = (np.concatenate(parts) for parts in zip(*blocks))
    ds = Dataset(population.columns, ids, rnds, traits, arms, ys)
    meta["arm_counts"] = ds.arm_counts(k)
    ds.metadata = meta
    return ds


class CollinearityFilter(TransformerMixin, BaseEstimator):
    """Drop trait columns that are nearly collinear with an earlier kept column.

    Columns are scanned left to right; a column is dropped when its absolute
    Pearson correlation with any already-kept column exceeds ``threshold``.
    Zero-variance columns take no part in the comparison and are always kept.
    """

    def __init__(self, threshold: float = 0.95):
        self.threshold = threshold

    def fit(self, X, y=None):
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigurationError(f"correlation threshold must lie in (0, 1], got {self.threshold}")
        X = check_array(X, ensure_min_samples=2)
        self.n_features_in_ = X.shape[1]
        std = X.std(axis=0)
        self.zero_variance_ = np.flatnonzero(std == 0)
        live = np.flatnonzero(std > 0)
        corr = np.corrcoef(X[:, live], rowvar=False) if live.size > 1 else np.ones((1, 1))
        corr = np.atleast_2d(corr)
        support = np.ones(X.shape[1], dtype=bool)
        kept = []
        for j in range(live.size):
            if any(abs(corr[i, j]) > self.threshold for i in kept):
                support[live[j]] = False
            else:
                kept.append(j)
        self.support_ = support
        return self

    def get_support(self, indices=False):
        check_is_fitted(self, "support_")
        return np.flatnonzero(self.support_) if indices else self.support_.copy()

    def transform(self, X):
        check_is_fitted(self, "support_")
        X = check_array(X, ensure_min_samples=0)
        if X.shape[1] != self.n_features_in_:
            raise UsageError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X[:, self.support_]


def select_features(dataset: Dataset, threshold: float) -> tuple[Dataset, list[str]]:
    """Remove co-linear trait columns; nudge and outcome are never touched."""
    if len(dataset) < 2:
        raise UsageError("feature selection needs at least 2 records")
    filt = CollinearityFilter(threshold).fit(dataset.traits)
    kept = [c for c, s in zip(dataset.columns, filt.support_) if s]
    removed = [c for c, s in zip(dataset.columns, filt.support_) if not s]
    meta = dict(dataset.metadata)
    meta["removed_columns"] = removed
    meta["zero_variance_columns"] = [dataset.columns[j] for j in filt.zero_variance_]
    meta["correlation_threshold"] = threshold
    return dataset.select_columns(kept, metadata=meta), removed


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Split stratified by nudge arm; each arm contributes round(frac * size) test rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError(f"test fraction must lie in (0, 1), got {test_fraction}")
    if len(dataset) == 0:
        raise UsageError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    test_mask = np.zeros(len(dataset), dtype=bool)
    empty_arms = []
    for arm in np.unique(dataset.nudges):
        rows = np.flatnonzero(dataset.nudges == arm)
        n_test = int(math.floor(test_fraction * rows.size + 0.5))
        if n_test == 0:
            empty_arms.append(int(arm))
        test_mask[rng.permutation(rows)[:n_test]] = True
    meta = dict(dataset.metadata, test_fraction=test_fraction, empty_test_arms=empty_arms)
    return (dataset.subset(np.flatnonzero(~test_mask), meta),
            dataset.subset(np.flatnonzero(test_mask), meta))


def meta_path(path) -> Path:
    return Path(path).with_suffix(".meta")


def write_csv(dataset: Dataset, path, write_meta: bool = True):
    """Write ``id,round,<traits...>,nudge,outcome`` plus a JSON ``.meta`` sidecar."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*FIXED_LEADING, *dataset.columns, *FIXED_TRAILING])
        for i, r, x, u, y in zip(dataset.ids, dataset.rounds, dataset.traits,
                                 dataset.nudges, dataset.outcomes):
            w.writerow([int(i), int(r), *(repr(float(v)) for v in x), int(u), int(y)])
    if write_meta:
        meta = dict(dataset.metadata)
        meta.setdefault("arm_counts", dataset.arm_counts())
        meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")


def _parse_int(cell, line, name):
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric {name} value {cell!r}", f"line {line}") from None
    if not value.is_integer():
        raise ParseError(f"{name} must be an integer, got {cell!r}", f"line {line}")
    return int(value)


def read_csv(path) -> Dataset:
    """Parse a dataset CSV; errors carry the 1-based line number."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if (header is None or len(header) < 4 or tuple(header[:2]) != FIXED_LEADING
                or tuple(header[-2:]) != FIXED_TRAILING):
            raise ParseError(
                "malformed header, expected id,round,<traits...>,nudge,outcome", "line 1"
            )
        columns = header[2:-2]
        if len(set(columns)) != len(columns) or any(not c for c in columns):
            raise ParseError("trait column names must be unique and non-empty", "line 1")
        ids, rnds, traits, nudges, ys = [], [], [], [], []
        for line, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(row)}", f"line {line}")
            ids.append(_parse_int(row[0], line, "id"))
            rnds.append(_parse_int(row[1], line, "round"))
            vals = []
            for name, cell in zip(columns, row[2:-2]):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric value {cell!r} in column {name!r}",
                                     f"line {line}") from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value in column {name!r}", f"line {line}")
                vals.append(v)
            traits.append(vals)
            u = _parse_int(row[-2], line, "nudge")
            if u < 0:
                raise ParseError(f"nudge must be >= 0, got {u}", f"line {line}")
            nudges.append(u)
            y = _parse_int(row[-1], line, "outcome")
            if y not in (0, 1):
                raise ParseError(f"outcome must be 0 or 1, got {row[-1]!r}", f"line {line}")
            ys.append(y)
    meta = {}
    if meta_path(path).exists():
        try:
            meta = json.loads(meta_path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"unreadable metadata sidecar: {exc}", str(meta_path(path))) from None
    if not ids:
        return Dataset.empty(columns, meta)
    return Dataset(columns, ids, rnds, traits, nudges, ys, meta)
