"""Simulate, learn and evaluate personalized nudge allocation."""

from .exceptions import (
    ConfigurationError,
    NudgeLabError,
    ParseError,
    PreregistrationError,
    StageError,
    TrainingError,
    UnsupportedOperationError,
    UsageError,
)
from .policy import (
    AllocationPlan,
    NudgeAllocator,
    PolicyConfig,
    allocate_oracle,
    allocate_personalized,
    allocate_uniform,
    decide,
)
from .trial import Dataset, TrialRecord, read_csv, run_rct, select_features, split, write_csv
from .world import (
    GroundTruthResponse,
    Individual,
    NudgeDef,
    NudgeSet,
    Population,
    TraitSpec,
    World,
    generate_population,
)

__version__ = "0.1.0"
