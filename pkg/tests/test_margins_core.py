from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binmargin.exact_oracle import enumerate_count
from binmargin.margins_core import (
    FREE,
    DimensionMismatch,
    Infeasible,
    IndexOutOfRange,
    MarginOutOfRange,
    MarginPair,
    MarginSumMismatch,
    Pattern,
    SubsetIndex,
    cell_status,
    check_table,
    find_table,
    gale_ryser_feasible,
    interior_nonempty,
    pattern_feasible,
    sigma_S,
    validate,
)

from oracles import all_binary_matrices, brute_count, brute_tables


# -- types ---------------------------------------------------------------------


def test_margin_pair_basics():
    mp = MarginPair([1, 2], (2, 1))
    assert (mp.m, mp.n, mp.N) == (2, 2, 3)
    assert mp.transpose() == MarginPair((2, 1), (1, 2))
    assert mp.to_json() == {"rows": [1, 2], "cols": [2, 1]}


def test_pattern_flags():
    assert Pattern([[0, 1], [1, 1]]).is_binary
    assert not Pattern([[0, 2.5], [1, 1]]).is_binary
    with pytest.raises(ValueError):
        Pattern([[-1, 1], [1, 1]])
    with pytest.raises(ValueError):
        Pattern([[np.inf, 1], [1, 1]])


# -- validate -------------------------------------------------------------------


def test_validate_interior_instance_untouched():
    inst = validate(MarginPair((1, 1), (1, 1)))
    assert not inst.is_reduced
    assert inst.reduced == MarginPair((1, 1), (1, 1))


def test_validate_forced_instance():
    inst = validate(MarginPair((2, 0), (1, 1)))
    assert inst.is_trivial
    assert inst.lift(np.zeros((0, 0))).tolist() == [[1, 1], [0, 0]]


def test_validate_sum_mismatch():
    with pytest.raises(MarginSumMismatch):
        validate(MarginPair((2, 1), (1, 1)))


def test_validate_range_and_shape_errors():
    with pytest.raises(MarginOutOfRange):
        validate(MarginPair((3, 0), (2, 1)))
    with pytest.raises(DimensionMismatch):
        validate(MarginPair((1, 1), (1, 1)), Pattern(np.ones((3, 2))))


def test_validate_contradiction():
    with pytest.raises(Infeasible):
        validate(MarginPair((1, 1), (1, 1)), Pattern([[0, 1], [0, 1]]))


@pytest.mark.parametrize("m,n", [(2, 2), (2, 3), (3, 3), (3, 4), (4, 4)])
def test_reduction_preserves_count(m, n):
    for R in itertools.product(range(n + 1), repeat=m):
        for C in itertools.product(range(m + 1), repeat=n):
            if sum(R) != sum(C) or (0 not in R + C and n not in R and m not in C):
                continue
            mp = MarginPair(R, C)
            try:
                inst = validate(mp)
            except Infeasible:
                assert enumerate_count(mp).count == 0
                continue
            full = enumerate_count(mp).count
            reduced = 1 if inst.is_trivial else enumerate_count(inst.reduced, inst.reduced_pattern).count
            assert full == reduced * inst.forced_weight


# -- feasibility ------------------------------------------------------------------


def test_gale_ryser_examples():
    assert gale_ryser_feasible(MarginPair((2, 1, 1), (2, 2)))
    assert brute_count((2, 1, 1), (2, 2)) == 2
    assert gale_ryser_feasible(MarginPair((2, 2), (1, 1, 2)))
    assert brute_count((2, 2), (1, 1, 2)) == 2
    assert not gale_ryser_feasible(MarginPair((3, 3), (1, 1, 1)))


def _tables_by_margins(m, n):
    D = all_binary_matrices(m, n)
    groups: dict = {}
    for idx, key in enumerate(zip(map(tuple, D.sum(axis=2).tolist()), map(tuple, D.sum(axis=1).tolist()))):
        groups.setdefault(key, []).append(idx)
    return D, groups


@pytest.mark.parametrize("m,n", [(m, n) for m in range(1, 5) for n in range(1, 5)])
def test_gale_ryser_matches_image_of_all_matrices(m, n):
    _, groups = _tables_by_margins(m, n)
    for R in itertools.product(range(n + 1), repeat=m):
        for C in itertools.product(range(m + 1), repeat=n):
            mp = MarginPair(R, C)
            expected = (R, C) in groups
            assert gale_ryser_feasible(mp) == expected
            if sum(R) == sum(C):
                assert pattern_feasible(mp) == expected


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5).flatmap(lambda m: st.tuples(
    st.lists(st.integers(0, 5), min_size=m, max_size=m),
    st.just(m),
)).flatmap(lambda rm: st.tuples(
    st.just(rm[0]),
    st.lists(st.integers(0, rm[1]), min_size=1, max_size=5),
)))
def test_gale_ryser_5x5_agrees_with_flow_and_enumeration(data):
    R, C = data
    n = len(C)
    R = [min(r, n) for r in R]
    mp = MarginPair(R, C)
    gr = gale_ryser_feasible(mp)
    if sum(R) == sum(C):
        assert gr == pattern_feasible(mp)
        assert gr == (enumerate_count(mp).count > 0)
    else:
        assert not gr


def test_pattern_feasible_examples():
    mp = MarginPair((1, 1), (1, 1))
    assert pattern_feasible(mp, Pattern([[0, 1], [1, 1]]))
    assert not pattern_feasible(mp, Pattern([[0, 1], [0, 1]]))
    assert pattern_feasible(MarginPair((1, 1, 1), (1, 1, 1)), Pattern(np.eye(3)))


def test_find_table_respects_pattern():
    W = Pattern([[1, 0, 1], [1, 1, 0], [0, 1, 1]])
    mp = MarginPair((1, 1, 1), (1, 1, 1))
    D = find_table(mp, W)
    assert check_table(D, mp, W)


def test_interior_examples():
    assert interior_nonempty(MarginPair((1, 1), (1, 1)))
    assert not interior_nonempty(MarginPair((1, 1), (1, 1)), Pattern([[0, 1], [1, 1]]))
    assert interior_nonempty(MarginPair((2, 2, 2), (2, 2, 2)))


@pytest.mark.parametrize("m,n", [(2, 2), (2, 3), (3, 3), (3, 4), (4, 4)])
def test_interior_and_cell_status_against_enumeration(m, n):
    D, groups = _tables_by_margins(m, n)
    for (R, C), idx in groups.items():
        T = D[idx]
        always1 = T.min(axis=0) == 1
        always0 = T.max(axis=0) == 0
        mp = MarginPair(R, C)
        assert interior_nonempty(mp) == (not always1.any() and not always0.any())
        status = cell_status(mp)
        assert np.array_equal(status == 1, always1)
        assert np.array_equal(status == 0, always0)
        assert np.array_equal(status == FREE, ~always1 & ~always0)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cell_status_with_random_patterns(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(2, 5, size=2)
    support = rng.random((m, n)) < 0.7
    D = (rng.random((m, n)) < 0.5) & support
    R, C = D.sum(axis=1), D.sum(axis=0)
    tables = np.array(brute_tables(R, C, support.astype(float)))
    status = cell_status(MarginPair(R, C), Pattern(support.astype(float)))
    on = support
    assert np.array_equal((status == 1) & on, (tables.min(axis=0) == 1) & on)
    assert np.array_equal(status[~on], np.zeros((~on).sum()))


# -- subsets ------------------------------------------------------------------------


def test_sigma_examples():
    S_all = SubsetIndex.parse("all", 2, 2)
    assert sigma_S(np.eye(2), S_all) == 2
    assert sigma_S(np.full((2, 2), 0.5), SubsetIndex.parse("row:0", 2, 2)) == 1
    D = np.array([[1, 0, 1], [0, 1, 1]])
    assert sigma_S(D, SubsetIndex.parse("all", 2, 3)) == D.sum()


def test_subset_parsing():
    assert SubsetIndex.parse("col:1", 3, 2).cells == {(0, 1), (1, 1), (2, 1)}
    assert SubsetIndex.parse("block:0,2,1,3", 4, 4).cells == {(0, 1), (0, 2), (1, 1), (1, 2)}
    assert SubsetIndex.parse("0,1;2,2", 3, 3).cells == {(0, 1), (2, 2)}


def test_subset_out_of_range():
    with pytest.raises(IndexOutOfRange):
        sigma_S(np.eye(2), SubsetIndex([(2, 0)]))
    with pytest.raises(IndexOutOfRange):
        SubsetIndex([(0, 0)]).check_pattern(Pattern([[0, 1], [1, 1]]))
