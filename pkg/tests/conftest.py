import numpy as np
import pytest

from nudgelab.world import GroundTruthResponse, NudgeSet, TraitSpec, World


def make_world(intercepts, coefficients, gamma=1.0, costs=None, seed=0, drift_intercepts=None,
               drift_coefficients=None):
    """World with continuous N(0, 1) traits x0..x{m-1} and the given response."""
    coefficients = np.atleast_2d(np.asarray(coefficients, dtype=float))
    k, m = coefficients.shape
    traits = [TraitSpec(f"x{j}", "continuous", {"mean": 0.0, "std": 1.0}) for j in range(m)]
    costs = [0.0] * (k - 1) if costs is None else list(costs)[1:]
    nudges = NudgeSet.from_costs([(f"n{u}", c) for u, c in enumerate(costs, start=1)])
    response = GroundTruthResponse(intercepts, coefficients, gamma, drift_intercepts,
                                   drift_coefficients)
    return World(traits, nudges, response, seed=seed)


@pytest.fixture
def small_world():
    return make_world([0.0, 0.5, -0.5], [[0.0, 0.0], [1.0, -1.0], [-1.0, 1.0]], seed=11)


@pytest.fixture
def mixed_specs():
    return [
        TraitSpec("age", "continuous", {"mean": 40.0, "std": 12.0}),
        TraitSpec("smoker", "binary", {"rate": 0.3}),
        TraitSpec("region", "categorical", {"weights": [0.5, 0.3, 0.2],
                                            "categories": ["north", "south", "east"]}),
    ]


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
