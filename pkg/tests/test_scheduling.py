import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netsched.scheduling import (
    SlotBudget,
    cycle_length,
    predictive_allocate,
    round_robin_allocate,
)


@pytest.mark.parametrize(
    "round_index, expected",
    [(0, {1, 2, 3, 4, 5}), (1, {6, 7, 8, 9, 10}), (4, {1, 2, 3, 4, 5})],
)
def test_round_robin_grant_sequence(round_index, expected):
    assert round_robin_allocate(round_index, 20, 5).granted == expected


def test_round_robin_wraps_when_not_divisible():
    assert round_robin_allocate(2, 7, 3).granted == {7, 1, 2}


@pytest.mark.parametrize("n, k", [(20, 5), (7, 3), (10, 4), (5, 1), (6, 6)])
def test_round_robin_coverage(n, k):
    t = cycle_length(n, k)
    for start in range(3 * t):
        counts = np.zeros(n + 1, dtype=int)
        for r in range(start, start + t):
            grant = round_robin_allocate(r, n, k).granted
            assert len(grant) == k
            counts[list(grant)] += 1
        if n % k == 0:
            assert (counts[1:] == 1).all()
        else:
            assert (counts[1:] >= 1).all()


def test_round_robin_rejects_bad_budget():
    with pytest.raises(ValueError):
        round_robin_allocate(0, 4, 0)


def test_predictive_top_two():
    assert predictive_allocate({1: 0.5, 2: 0.1, 3: 0.9}, 2).granted == {1, 3}


def test_predictive_tie_break_by_id():
    assert predictive_allocate({1: 1.0, 2: 1.0, 3: 1.0, 4: 1.0}, 2).granted == {1, 2}


def test_predictive_argmax():
    assert predictive_allocate({1: 0.0, 2: 0.0, 3: 1.0}, 1).granted == {3}


def test_predictive_missing_agent():
    with pytest.raises(KeyError, match="agent 2"):
        predictive_allocate({1: 0.3, 3: 0.2}, 1, n_agents=3)


def _brute_force(priorities, k):
    """Lexicographically smallest admissible subset among all size-k subsets."""
    ids = sorted(priorities)
    admissible = []
    for subset in itertools.combinations(ids, k):
        rest = [i for i in ids if i not in subset]
        if all(priorities[g] >= priorities[r] for g in subset for r in rest):
            admissible.append(subset)
    # admissible subsets differ only in which tied agents they take; smallest ids win
    return set(min(admissible))


@given(st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0, 2.0]), min_size=n, max_size=n),
    st.integers(1, n - 1),
)))
def test_predictive_matches_subset_enumeration(case):
    values, k = case
    priorities = {i + 1: p for i, p in enumerate(values)}
    assert predictive_allocate(priorities, k).granted == _brute_force(priorities, k)


@given(st.permutations(range(1, 7)), st.lists(st.floats(0, 5), min_size=6, max_size=6), st.integers(1, 5))
def test_predictive_permutation_equivariance(perm, values, k):
    # distinct priorities so the tie-break never applies
    values = [v + 1e-3 * i for i, v in enumerate(values)]
    priorities = {i + 1: v for i, v in enumerate(values)}
    relabel = dict(zip(range(1, 7), perm))
    permuted = {relabel[i]: v for i, v in priorities.items()}
    assert predictive_allocate(permuted, k).granted == {relabel[i] for i in predictive_allocate(priorities, k).granted}


def test_predictive_deterministic():
    rng = np.random.default_rng(0)
    pri = {i: float(v) for i, v in enumerate(rng.integers(0, 3, 10), start=1)}
    assert predictive_allocate(pri, 4) == predictive_allocate(dict(reversed(list(pri.items()))), 4)


@pytest.mark.parametrize("n, k, expected", [(20, 5, 4), (20, 2, 10), (7, 3, 3), (20, 4, 5)])
def test_cycle_length(n, k, expected):
    assert cycle_length(n, k) == expected


def test_budget_validation():
    assert SlotBudget.from_slots(5, 2) == SlotBudget(5, 5, 2)
    with pytest.raises(ValueError, match="k_pred"):
        SlotBudget.from_slots(5, 6)
    with pytest.raises(ValueError, match="k_total"):
        SlotBudget(6, 5, 2)
    with pytest.raises(ValueError):
        SlotBudget.from_slots(0, 0)
