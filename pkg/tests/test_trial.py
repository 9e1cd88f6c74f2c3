import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nudgelab.exceptions import ConfigurationError, ParseError, UsageError
from nudgelab.trial import (
    CollinearityFilter,
    Dataset,
    meta_path,
    read_csv,
    run_rct,
    select_features,
    split,
    write_csv,
)

from conftest import make_world


@pytest.fixture
def four_arm_world():
    return make_world([0.0, 0.2, -0.2, 0.1], np.zeros((4, 2)), seed=5)


def test_balanced_blocks(four_arm_world):
    pop = four_arm_world.generate_population(100, seed=1)
    ds = run_rct(four_arm_world, pop, rounds=1, seed=3)
    assert len(ds) == 100
    assert ds.arm_counts(4) == [25, 25, 25, 25]


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 60), rounds=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_balance_invariant(n, rounds, seed):
    world = make_world([0.0, 0.0, 0.0], np.zeros((3, 1)), seed=seed)
    pop = world.generate_population(n, seed=seed)
    ds = run_rct(world, pop, rounds=rounds, seed=seed)
    assert len(ds) == n * rounds
    for r in range(rounds):
        counts = np.bincount(ds.nudges[ds.rounds == r], minlength=3)
        assert counts.max() - counts.min() <= 1
        assert counts[0] >= n // 3


def test_small_population_warns(four_arm_world):
    pop = four_arm_world.generate_population(3, seed=1)
    ds = run_rct(four_arm_world, pop, seed=0)
    assert ds.metadata["warnings"]


def test_rct_deterministic(four_arm_world):
    a = run_rct(four_arm_world.clone(), four_arm_world.generate_population(40, 2), 2, seed=9)
    b = run_rct(four_arm_world.clone(), four_arm_world.generate_population(40, 2), 2, seed=9)
    assert a == b


def test_rct_rejects_empty(four_arm_world):
    with pytest.raises(UsageError):
        run_rct(four_arm_world, four_arm_world.generate_population(0, 1))


def _dataset(traits, columns=None, nudges=None, outcomes=None):
    traits = np.asarray(traits, dtype=float)
    n = traits.shape[0]
    columns = columns or [f"X{j + 1}" for j in range(traits.shape[1])]
    nudges = np.arange(n) % 2 if nudges is None else nudges
    outcomes = np.arange(n) % 2 if outcomes is None else outcomes
    return Dataset(columns, np.arange(n), np.zeros(n), traits, nudges, outcomes)


class TestSelectFeatures:
    def test_duplicate_removed(self):
        x1 = np.random.default_rng(0).normal(size=50)
        ds, removed = select_features(_dataset(np.column_stack([x1, x1])), 0.95)
        assert removed == ["X2"] and ds.columns == ["X1"]

    def test_anticorrelated_removed(self):
        x1 = np.random.default_rng(1).normal(size=50)
        _, removed = select_features(_dataset(np.column_stack([x1, -x1])), 0.95)
        assert removed == ["X2"]

    def test_independent_kept(self):
        u = np.random.default_rng(2).uniform(size=(1000, 2))
        r = np.corrcoef(u, rowvar=False)[0, 1]
        assert abs(r) < 0.2  # sample correlation at n=1000 is ~N(0, 1/sqrt(1000))
        _, removed = select_features(_dataset(u), 0.95)
        assert removed == []

    def test_zero_variance_retained_and_reported(self):
        x = np.random.default_rng(3).normal(size=(30, 1))
        ds, removed = select_features(_dataset(np.hstack([x, np.ones((30, 1))])), 0.95)
        assert removed == []
        assert ds.metadata["zero_variance_columns"] == ["X2"]

    def test_nudge_and_outcome_untouched(self):
        x = np.random.default_rng(4).normal(size=(20, 1))
        nudges = (x[:, 0] > 0).astype(int)
        ds, _ = select_features(_dataset(x, nudges=nudges, outcomes=nudges), 0.5)
        assert np.array_equal(ds.nudges, nudges) and np.array_equal(ds.outcomes, nudges)

    def test_needs_two_records(self):
        with pytest.raises(UsageError):
            select_features(_dataset([[1.0, 2.0]]), 0.9)

    def test_bad_threshold(self):
        with pytest.raises(ConfigurationError):
            select_features(_dataset(np.eye(3)), 1.5)

    def test_column_order_stability(self):
        rng = np.random.default_rng(5)
        a, c = rng.normal(size=(2, 100))
        b = a + 0.01 * rng.normal(size=100)
        _, removed = select_features(_dataset(np.column_stack([a, b, c]), ["a", "b", "c"]), 0.95)
        _, removed_perm = select_features(
            _dataset(np.column_stack([a, c, b]), ["a", "c", "b"]), 0.95)
        assert removed == removed_perm == ["b"]

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), rho=st.floats(0.3, 1.0))
    def test_idempotent(self, seed, rho):
        rng = np.random.default_rng(seed)
        base = rng.normal(size=(40, 3))
        X = np.column_stack([base, base[:, 0] + 0.3 * rng.normal(size=40), base[:, 1] * -2])
        once, _ = select_features(_dataset(X), rho)
        _, removed_again = select_features(once, rho)
        assert removed_again == []

    def test_transformer_api(self):
        x = np.random.default_rng(6).normal(size=(25, 1))
        X = np.hstack([x, 2 * x, np.random.default_rng(7).normal(size=(25, 1))])
        filt = CollinearityFilter(threshold=0.9).fit(X)
        assert filt.get_support().tolist() == [True, False, True]
        assert filt.transform(X).shape == (25, 2)
        assert filt.get_params() == {"threshold": 0.9}


class TestSplit:
    def test_stratification_arithmetic(self):
        ds = _dataset(np.zeros((100, 1)), nudges=np.arange(100) % 4)
        train, test = split(ds, 0.2, seed=0)
        assert len(test) == 20 and len(train) == 80
        assert np.bincount(test.nudges, minlength=4).tolist() == [5, 5, 5, 5]

    def test_disjoint_union(self):
        ds = _dataset(np.random.default_rng(0).normal(size=(37, 2)), nudges=np.arange(37) % 3)
        train, test = split(ds, 0.3, seed=4)
        keys = lambda d: {(int(i), int(r)) for i, r in zip(d.ids, d.rounds)}  # noqa: E731
        assert keys(train) | keys(test) == keys(ds)
        assert not keys(train) & keys(test)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 80), frac=st.floats(0.01, 0.99), seed=st.integers(0, 100))
    def test_per_arm_share_within_one(self, n, frac, seed):
        ds = _dataset(np.zeros((n, 1)), nudges=np.arange(n) % 3)
        _, test = split(ds, frac, seed)
        for arm in range(3):
            size = int(np.sum(ds.nudges == arm))
            assert abs(np.sum(test.nudges == arm) - frac * size) <= 1

    def test_empty_test_arm_recorded(self):
        ds = _dataset(np.zeros((6, 1)), nudges=[0, 0, 0, 0, 0, 1])
        _, test = split(ds, 0.2, seed=0)
        assert test.metadata["empty_test_arms"] == [1]

    def test_same_seed_same_split(self):
        ds = _dataset(np.random.default_rng(1).normal(size=(50, 2)), nudges=np.arange(50) % 2)
        assert split(ds, 0.25, 3)[1] == split(ds, 0.25, 3)[1]

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
    def test_fraction_bounds(self, frac):
        with pytest.raises(ConfigurationError):
            split(_dataset(np.zeros((4, 1))), frac, 0)


class TestCsv:
    def test_round_trip(self, tmp_path, four_arm_world):
        ds = run_rct(four_arm_world, four_arm_world.generate_population(30, 3), 2, seed=1)
        path = tmp_path / "d.csv"
        write_csv(ds, path)
        back = read_csv(path)
        assert back == ds
        assert back.records == ds.records
        assert back.metadata["arm_counts"] == ds.metadata["arm_counts"]

    def test_header_and_sidecar(self, tmp_path):
        ds = _dataset([[1.5, -2.0]], columns=["a", "b"])
        path = tmp_path / "d.csv"
        write_csv(ds, path)
        lines = path.read_text().split("\n")
        assert lines[0] == "id,round,a,b,nudge,outcome"
        assert lines[1] == "0,0,1.5,-2.0,0,0"
        assert meta_path(path).name == "d.meta"
        assert json.loads(meta_path(path).read_text())["arm_counts"] == [1]

    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "e.csv"
        write_csv(Dataset.empty(["a"]), path)
        assert path.read_text() == "id,round,a,nudge,outcome\n"
        back = read_csv(path)
        assert len(back) == 0 and back.columns == ["a"]

    def test_bad_outcome_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        rows = ["id,round,a,nudge,outcome"] + [f"{i},0,0.5,1,1" for i in range(3)]
        rows.append("3,0,0.5,1,2")
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(ParseError, match="line 5") as info:
            read_csv(path)
        assert info.value.location == "line 5"

    @pytest.mark.parametrize("content, where", [
        ("round,id,a,nudge,outcome\n", "line 1"),
        ("id,round,a,nudge,outcome\n0,0,abc,1,0\n", "line 2"),
        ("id,round,a,nudge,outcome\n0,0,1.0,1\n", "line 2"),
        ("id,round,a,nudge,outcome\n0,0,1.0,0,1\n1,0,,0,1\n", "line 3"),
    ])
    def test_parse_errors(self, tmp_path, content, where):
        path = tmp_path / "bad.csv"
        path.write_text(content)
        with pytest.raises(ParseError, match=where):
            read_csv(path)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False),
                              st.integers(0, 3), st.integers(0, 1)), min_size=1, max_size=20))
    def test_round_trip_property(self, tmp_path_factory, rows):
        x, u, y = zip(*rows)
        ds = Dataset(["v"], range(len(rows)), [0] * len(rows), np.array(x)[:, None], u, y)
        path = tmp_path_factory.mktemp("rt") / "p.csv"
        write_csv(ds, path)
        assert read_csv(path) == ds


def test_dataset_is_immutable():
    ds = _dataset(np.zeros((3, 1)))
    with pytest.raises(ValueError):
        ds.traits[0, 0] = 1.0
