"""Synthetic populations with a known ground-truth response to each nudge.

The simulator is the oracle every learned model is validated against. Each
nudge arm responds through a logistic function of the encoded traits, the
response decays geometrically with repeated exposure to the same nudge, and
the coefficients can drift linearly with the deployment round.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .exceptions import ConfigurationError, UsageError

TRAIT_KINDS = ("continuous", "binary", "categorical")


def logistic(z):
    """Numerically stable logistic function for scalars or arrays."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TraitSpec:
    """One trait of the population and the distribution it is drawn from.

    ``params`` holds ``mean``/``std`` for continuous traits, ``rate`` for
    binary ones and ``weights`` (optionally ``categories``) for categoricals.
    Categoricals are one-hot encoded, one column per category.
    """

    name: str
    kind: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TRAIT_KINDS:
            raise ConfigurationError(f"trait {self.name!r}: unknown kind {self.kind!r}")
        p = self.params
        if self.kind == "continuous":
            std = float(p.get("std", 1.0))
            if not std >= 0 or not math.isfinite(std):
                raise ConfigurationError(f"trait {self.name!r}: std must be >= 0, got {std}")
            if not math.isfinite(float(p.get("mean", 0.0))):
                raise ConfigurationError(f"trait {self.name!r}: mean must be finite")
        elif self.kind == "binary":
            rate = float(p.get("rate", 0.5))
            if not 0.0 <= rate <= 1.0:
                raise ConfigurationError(f"trait {self.name!r}: rate must lie in [0, 1], got {rate}")
        else:
            weights = np.asarray(p.get("weights", ()), dtype=np.float64)
            if weights.ndim != 1 or weights.size == 0:
                raise ConfigurationError(f"trait {self.name!r}: categorical needs a weights list")
            if np.any(weights < 0) or np.any(weights > 1):
                raise ConfigurationError(f"trait {self.name!r}: weights must lie in [0, 1]")
            if abs(weights.sum() - 1.0) > 1e-9:
                raise ConfigurationError(
                    f"trait {self.name!r}: weights sum to {weights.sum()!r}, expected 1"
                )
            cats = p.get("categories")
            if cats is not None and len(cats) != weights.size:
                raise ConfigurationError(
                    f"trait {self.name!r}: {len(cats)} categories for {weights.size} weights"
                )

    @property
    def columns(self) -> list[str]:
        if self.kind != "categorical":
            return [self.name]
        cats = self.params.get("categories") or range(len(self.params["weights"]))
        return [f"{self.name}_{c}" for c in cats]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` encoded values, shape ``(n, len(self.columns))``."""
        p = self.params
        if self.kind == "continuous":
            x = rng.normal(float(p.get("mean", 0.0)), float(p.get("std", 1.0)), size=n)
            return x[:, None]
        if self.kind == "binary":
            return (rng.random(n) < float(p.get("rate", 0.5))).astype(np.float64)[:, None]
        weights = np.asarray(p["weights"], dtype=np.float64)
        idx = rng.choice(weights.size, size=n, p=weights / weights.sum())
        return np.eye(weights.size)[idx]


def encoded_columns(specs: Sequence[TraitSpec]) -> list[str]:
    cols = [c for s in specs for c in s.columns]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigurationError(f"trait names must be unique, got {names}")
    if len(set(cols)) != len(cols):
        raise ConfigurationError(f"encoded column names collide: {cols}")
    return cols


@dataclass(frozen=True)
class NudgeDef:
    id: int
    label: str
    cost: float = 0.0


class NudgeSet(Sequence):
    """The interventions ``0..l``; id 0 is always the free "none" nudge."""

    def __init__(self, nudges: Sequence[NudgeDef]):
        nudges = tuple(nudges)
        if not nudges or nudges[0].id != 0 or nudges[0].label != "none" or nudges[0].cost != 0:
            raise ConfigurationError("nudge 0 must be present with label 'none' and cost 0")
        for u, nd in enumerate(nudges):
            if nd.id != u:
                raise ConfigurationError(f"nudge ids must be contiguous 0..l, got {nd.id} at {u}")
            if not (nd.cost >= 0 and math.isfinite(nd.cost)):
                raise ConfigurationError(f"nudge {nd.label!r}: cost must be >= 0")
        self._nudges = nudges

    @classmethod
    def from_costs(cls, labels_costs: Sequence[tuple[str, float]]) -> "NudgeSet":
        """Build a set from ``(label, cost)`` pairs for the non-control nudges."""
        defs = [NudgeDef(0, "none", 0.0)]
        defs += [NudgeDef(i + 1, lbl, float(c)) for i, (lbl, c) in enumerate(labels_costs)]
        return cls(defs)

    def __getitem__(self, u):
        if isinstance(u, slice):
            return self._nudges[u]
        if not isinstance(u, (int, np.integer)) or not 0 <= u < len(self._nudges):
            raise LookupError(f"unknown nudge id {u!r}")
        return self._nudges[u]

    def __len__(self):
        return len(self._nudges)

    def __eq__(self, other):
        return isinstance(other, NudgeSet) and self._nudges == other._nudges

    def __repr__(self):
        return f"NudgeSet({list(self._nudges)!r})"

    @property
    def costs(self) -> np.ndarray:
        return np.array([nd.cost for nd in self._nudges], dtype=np.float64)

    @property
    def labels(self) -> list[str]:
        return [nd.label for nd in self._nudges]


class Population:
    """Individuals as a trait matrix plus a per-nudge exposure count matrix."""

    def __init__(self, ids, traits, columns: Sequence[str], exposures=None):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.traits = np.array(traits, dtype=np.float64).reshape(len(self.ids), len(columns))
        self.traits.setflags(write=False)
        self.columns = list(columns)
        if len(np.unique(self.ids)) != len(self.ids):
            raise UsageError("individual ids must be unique within a population")
        if exposures is None:
            exposures = np.zeros((len(self.ids), 1), dtype=np.int64)
        self.exposures = np.array(exposures, dtype=np.int64)
        self._row = {int(i): k for k, i in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, index: int) -> "Individual":
        return Individual(self, index)

    def __iter__(self) -> Iterator["Individual"]:
        return (Individual(self, k) for k in range(len(self)))

    def index_of(self, individual_id: int) -> int:
        return self._row[int(individual_id)]

    def ensure_arms(self, n_arms: int):
        missing = n_arms - self.exposures.shape[1]
        if missing > 0:
            pad = np.zeros((len(self), missing), dtype=np.int64)
            self.exposures = np.hstack([self.exposures, pad])

    def copy(self) -> "Population":
        return Population(self.ids.copy(), self.traits.copy(), self.columns, self.exposures.copy())

    def subset(self, rows) -> "Population":
        rows = np.asarray(rows)
        return Population(self.ids[rows], self.traits[rows], self.columns, self.exposures[rows])


class Individual:
    """A view of one row of a :class:`Population`.

    ``exposures`` is indexed by nudge id; writes through the view update the
    owning population.
    """

    __slots__ = ("population", "index")

    def __init__(self, population: Population, index: int):
        self.population = population
        self.index = index

    @classmethod
    def from_traits(cls, traits, id: int = 0, exposures: Mapping[int, int] | None = None):
        """Standalone individual, mostly for tests and hand calculations."""
        traits = np.asarray(traits, dtype=np.float64)
        cols = [f"x{k}" for k in range(traits.size)]
        exposures = dict(exposures or {})
        width = max(exposures, default=0) + 1
        counts = np.zeros((1, width), dtype=np.int64)
        for u, c in exposures.items():
            counts[0, u] = c
        return cls(Population([id], traits[None, :], cols, counts), 0)

    @property
    def id(self) -> int:
        return int(self.population.ids[self.index])

    @property
    def traits(self) -> np.ndarray:
        return self.population.traits[self.index]

    @property
    def exposures(self) -> np.ndarray:
        return self.population.exposures[self.index]

    def exposure(self, nudge: int) -> int:
        row = self.population.exposures[self.index]
        return int(row[nudge]) if nudge < row.size else 0

    def __repr__(self):
        return f"Individual(id={self.id}, traits={self.traits.tolist()})"


def generate_population(specs: Sequence[TraitSpec], n: int, seed: int) -> Population:
    """Draw ``n`` individuals with ids ``0..n-1``.

    Each trait is drawn from its own substream of ``seed`` so adding a trait
    at the end of the list leaves the earlier columns unchanged. Draws are
    never truncated or winsorized.
    """
    if not specs:
        raise ConfigurationError("population spec must contain at least one trait")
    if n < 0:
        raise ConfigurationError(f"population size must be >= 0, got {n}")
    columns = encoded_columns(specs)
    streams = np.random.SeedSequence(seed).spawn(len(specs))
    blocks = [s.sample(np.random.default_rng(ss), n) for s, ss in zip(specs, streams)]
    traits = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return Population(np.arange(n), traits, columns)


@dataclass
class GroundTruthResponse:
    """Per-arm logistic response with creep factor and linear drift schedule.

    ``coefficients`` has shape ``(n_arms, n_features)``; the drift arrays
    hold the additive shift applied per elapsed round.
    """

    intercepts: np.ndarray
    coefficients: np.ndarray
    gamma: float = 1.0
    drift_intercepts: np.ndarray | None = None
    drift_coefficients: np.ndarray | None = None

    def __post_init__(self):
        self.intercepts = np.asarray(self.intercepts, dtype=np.float64).ravel()
        k = self.intercepts.size
        self.coefficients = np.atleast_2d(np.asarray(self.coefficients, dtype=np.float64))
        if self.coefficients.shape[0] != k:
            raise ConfigurationError(
                f"coefficients have {self.coefficients.shape[0]} rows for {k} arms"
            )
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"creep factor gamma must lie in (0, 1], got {self.gamma}")
        if self.drift_intercepts is None:
            self.drift_intercepts = np.zeros(k)
        if self.drift_coefficients is None:
            self.drift_coefficients = np.zeros_like(self.coefficients)
        self.drift_intercepts = np.asarray(self.drift_intercepts, dtype=np.float64).ravel()
        self.drift_coefficients = np.atleast_2d(
            np.asarray(self.drift_coefficients, dtype=np.float64)
        )
        if self.drift_intercepts.shape != self.intercepts.shape:
            raise ConfigurationError("drift intercepts must have one entry per arm")
        if self.drift_coefficients.shape != self.coefficients.shape:
            raise ConfigurationError("drift coefficients must match the coefficient shape")

    @property
    def n_arms(self) -> int:
        return self.intercepts.size


class World:
    """Ground truth for one experiment: traits, nudges, response and seed.

    Outcome randomness comes from substreams keyed by
    ``(seed, individual id, round)``, so a trajectory does not depend on the
    order in which individuals are evaluated. Cloned worlds share those
    streams, which pairs the comparisons between policies.
    """

    def __init__(self, traits: Sequence[TraitSpec], nudges: NudgeSet,
                 response: GroundTruthResponse, seed: int = 0):
        self.trait_specs = list(traits)
        self.columns = encoded_columns(self.trait_specs)
        self.nudges = nudges
        self.response = response
        self.seed = int(seed)
        if response.n_arms != len(nudges):
            raise ConfigurationError(
                f"response defines {response.n_arms} arms but the nudge set has {len(nudges)}"
            )
        if response.coefficients.shape[1] != len(self.columns):
            raise ConfigurationError(
                f"response has {response.coefficients.shape[1]} coefficients per arm, "
                f"traits encode to {len(self.columns)} columns"
            )
        self.drift_round = 0
        self._last_advance: int | None = None

    @property
    def n_arms(self) -> int:
        return len(self.nudges)

    def clone(self, seed: int | None = None) -> "World":
        other = copy.deepcopy(self)
        if seed is not None:
            other.seed = int(seed)
        return other

    def generate_population(self, n: int, seed: int) -> Population:
        pop = generate_population(self.trait_specs, n, seed)
        pop.ensure_arms(self.n_arms)
        return pop

    def _logits(self, traits: np.ndarray) -> np.ndarray:
        r = self.response
        a = r.intercepts + self.drift_round * r.drift_intercepts
        b = r.coefficients + self.drift_round * r.drift_coefficients
        return a + traits @ b.T

    def _check_round(self, round_):
        if round_ < 0:
            raise UsageError(f"round must be >= 0, got {round_}")

    def true_response(self, individual: Individual, nudge, round_: int = 0) -> float:
        """Success probability of ``nudge`` for ``individual`` right now.

        ``round_`` is the evaluation round; the drift contribution is the one
        accumulated by :meth:`advance_drift`.
        """
        self._check_round(round_)
        u = self.nudges[int(getattr(nudge, "id", nudge))].id
        base = logistic(self._logits(individual.traits[None, :])[0, u])
        p = base * self.response.gamma ** individual.exposure(u)
        return min(max(float(p), 0.0), 1.0)

    def response_matrix(self, population: Population, round_: int = 0) -> np.ndarray:
        """True probabilities for every individual and arm, shape ``(n, n_arms)``."""
        self._check_round(round_)
        population.ensure_arms(self.n_arms)
        base = logistic(self._logits(population.traits))
        creep = self.response.gamma ** population.exposures[:, : self.n_arms]
        return np.clip(base * creep, 0.0, 1.0)

    def outcome_stream(self, individual_id: int, round_: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, int(individual_id), int(round_)])

    def sample_outcome(self, individual: Individual, nudge, round_: int,
                       rng: np.random.Generator | None = None) -> int:
        """Bernoulli draw at the true probability, then record the exposure."""
        p = self.true_response(individual, nudge, round_)
        u = int(getattr(nudge, "id", nudge))
        if rng is None:
            rng = self.outcome_stream(individual.id, round_)
        y = int(rng.random() < p)
        if u != 0:
            individual.population.ensure_arms(self.n_arms)
            individual.population.exposures[individual.index, u] += 1
        return y

    def sample_outcomes(self, population: Population, decisions, round_: int) -> np.ndarray:
        """Vectorized :meth:`sample_outcome` for one decision per individual."""
        decisions = np.asarray(decisions, dtype=np.int64)
        if decisions.shape != (len(population),):
            raise UsageError("need exactly one decision per individual")
        if decisions.size and (decisions.min() < 0 or decisions.max() >= self.n_arms):
            raise LookupError(f"decisions reference unknown nudge ids for {self.n_arms} arms")
        p = self.response_matrix(population, round_)[np.arange(len(population)), decisions]
        draws = np.array([self.outcome_stream(i, round_).random() for i in population.ids])
        y = (draws < p).astype(np.int64) if len(population) else np.zeros(0, dtype=np.int64)
        rows = np.flatnonzero(decisions != 0)
        np.add.at(population.exposures, (rows, decisions[rows]), 1)
        return y

    def advance_drift(self, round_: int):
        """Move the drift clock to ``round_``; rounds must strictly increase."""
        if round_ < 0 or (self._last_advance is not None and round_ <= self._last_advance):
            raise UsageError(
                f"drift rounds must strictly increase: last {self._last_advance}, got {round_}"
            )
        self._last_advance = self.drift_round = int(round_)
