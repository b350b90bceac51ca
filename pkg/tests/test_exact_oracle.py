from __future__ import annotations

import itertools
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binmargin.entropy_solver import solve
from binmargin.exact_oracle import (
    ExactCount,
    InstanceTooLarge,
    SearchBudgetExceeded,
    block_permanent,
    build_permanent_matrix,
    count_tables,
    count_via_permanent,
    enumerate_count,
    enumerate_tables,
    generating_function_check,
    ryser_permanent,
    scaling_certificate,
)
from binmargin.margins_core import MarginPair, Pattern, check_table, interior_nonempty

from instances import SMALL_SIZES, random_margins, random_patterned, sorted_margin_pairs
from oracles import brute_count, block_matrix_by_hand, permanent_by_permutations, row_choice_scan


# -- enumeration --------------------------------------------------------------------------


def test_enumeration_examples():
    assert enumerate_count(MarginPair((1, 1), (1, 1))).count == 2
    assert enumerate_count(MarginPair((1, 1, 1), (1, 1, 1))).count == 6
    four = MarginPair((2,) * 4, (2,) * 4)
    assert enumerate_count(four).count == 90 == row_choice_scan((2,) * 4, (2,) * 4)


def test_enumeration_json():
    res = enumerate_count(MarginPair((2,) * 4, (2,) * 4))
    assert res.to_json() == {"count": "90", "method": "enumeration"}
    frac = ExactCount(Fraction(7, 4), "enumeration").to_json()
    assert frac["count_exact"] == "7/4"
    assert json.loads(json.dumps(frac))["count"] == "1.75"


@pytest.mark.parametrize("m,n", [(2, 3), (3, 3), (3, 4), (4, 3)])
def test_enumeration_against_brute_force(m, n):
    for mp in sorted_margin_pairs(m, n):
        assert enumerate_count(mp).count == brute_count(mp.rows, mp.cols)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_enumeration_with_patterns_against_brute_force(seed, weighted):
    rng = np.random.default_rng(seed)
    mp, pat = random_patterned(rng, max_cells=16, weighted=weighted)
    expected = brute_count(mp.rows, mp.cols, pat.W)
    got = enumerate_count(mp, pat).count
    assert Fraction(got) == Fraction(expected)


def test_enumerate_tables_lists_valid_distinct_tables():
    mp = MarginPair((2, 1, 1), (1, 2, 1))
    W = Pattern([[1, 1, 0], [1, 1, 1], [1, 1, 1]])
    tables = list(enumerate_tables(mp, W))
    assert len(tables) == enumerate_count(mp, W).count
    assert len({t.tobytes() for t in tables}) == len(tables)
    assert all(check_table(t, mp, W) for t in tables)
    assert len(list(enumerate_tables(mp, W, limit=2))) == 2


def test_zero_count_when_infeasible():
    assert enumerate_count(MarginPair((2, 2), (2, 1, 1)), Pattern([[1, 1, 0], [1, 1, 0]])).count == 0
    assert count_tables(MarginPair((1, 1), (1, 1)), Pattern([[0, 1], [0, 1]])).count == 0


def test_budget_exceeded():
    mp = MarginPair((10,) * 20, (10,) * 20)
    with pytest.raises(SearchBudgetExceeded):
        enumerate_count(mp, budget=10_000)


def test_workers_give_identical_results():
    mp = MarginPair((3, 3, 2, 2, 2), (3, 2, 2, 2, 3))
    one = enumerate_count(mp)
    many = enumerate_count(mp, workers=3)
    assert one.count == many.count and type(one.count) is type(many.count)
    W = Pattern(np.array([[1, 2, 0.5, 1, 1]] * 5))
    assert enumerate_count(mp, W).count == enumerate_count(mp, W, workers=2).count


def test_complement_symmetry():
    for m, n in [(2, 3), (3, 3), (3, 4), (4, 4)]:
        for mp in sorted_margin_pairs(m, n):
            comp = MarginPair(tuple(n - r for r in mp.rows), tuple(m - c for c in mp.cols))
            assert enumerate_count(mp).count == enumerate_count(comp).count


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_transpose_symmetry(seed):
    rng = np.random.default_rng(seed)
    mp = random_margins(rng, 5, 5)
    assert enumerate_count(mp).count == enumerate_count(mp.transpose()).count


# -- permanent construction -----------------------------------------------------------------


def test_permanent_matrix_2x2():
    con = build_permanent_matrix(MarginPair((1, 1), (1, 1)))
    assert con.A.shape == (4, 4)
    assert [b.size for b in con.row_blocks if b.kind == "I"] == [1, 1]
    assert [b.size for b in con.row_blocks if b.kind == "II"] == [1, 1]
    assert ryser_permanent(con.A) == 2


def test_permanent_matrix_zero_weight():
    W = np.ones((2, 3))
    W[1, 2] = 0
    mp = MarginPair((2, 1), (1, 1, 1))
    con = build_permanent_matrix(mp, Pattern(W))
    blk = [b for b in con.row_blocks if b.kind == "II" and b.index == 2][0]
    assert np.all(con.A[blk.start : blk.start + blk.size, 1 * 3 + 2] == 0)
    assert np.array_equal(con.A, block_matrix_by_hand(mp.rows, mp.cols, W))


@pytest.mark.parametrize("m,n", [(2, 2), (2, 3), (3, 3), (3, 4)])
def test_permanent_matrix_matches_hand_construction(m, n):
    for mp in sorted_margin_pairs(m, n):
        con = build_permanent_matrix(mp)
        assert np.array_equal(con.A, block_matrix_by_hand(mp.rows, mp.cols))
        assert sum(b.size for b in con.row_blocks) == m * n
        nnz = (con.A != 0).sum(axis=0).reshape(m, n)
        expected = np.add.outer([n - r for r in mp.rows], mp.cols)
        assert np.array_equal(nnz, expected)


def test_permanent_size_cap():
    with pytest.raises(InstanceTooLarge):
        build_permanent_matrix(MarginPair((3,) * 6, (3,) * 6))
    with pytest.raises(InstanceTooLarge):
        ryser_permanent(np.ones((29, 29), dtype=np.int64))


# -- Ryser --------------------------------------------------------------------------------


@pytest.mark.parametrize("k", [1, 2, 5, 9, 12])
def test_ryser_identity_and_ones(k):
    assert ryser_permanent(np.eye(k, dtype=np.int64)) == 1
    assert ryser_permanent(np.ones((k, k), dtype=np.int64)) == math.factorial(k)


def test_ryser_large_all_ones_is_exact():
    assert ryser_permanent(np.ones((20, 20), dtype=np.int64)) == math.factorial(20)


def test_ryser_hand_example():
    M = np.array([[1, 1, 0, 0], [0, 1, 1, 0], [0, 0, 1, 1], [1, 0, 0, 1]])
    assert ryser_permanent(M) == 2 == permanent_by_permutations(M)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_ryser_against_permutation_sum(seed, k):
    rng = np.random.default_rng(seed)
    M = rng.integers(-3, 4, size=(k, k))
    assert ryser_permanent(M) == permanent_by_permutations(M)
    F = rng.uniform(0, 2, size=(k, k))
    assert ryser_permanent(F) == pytest.approx(permanent_by_permutations(F), rel=1e-10)


# -- count via permanent -----------------------------------------------------------------------


def test_count_via_permanent_examples():
    assert count_via_permanent(MarginPair((1, 1), (1, 1))).count == 2
    mp = MarginPair((1, 1, 2), (2, 2))
    assert count_via_permanent(mp).count == enumerate_count(mp).count
    assert count_via_permanent(MarginPair((1, 1), (1, 1)), Pattern([[0, 1], [1, 1]])).count == 1


@pytest.mark.parametrize("m,n", [(2, 2), (2, 3), (3, 3), (2, 4), (3, 4), (4, 4)])
def test_block_and_gray_code_permanents_agree(m, n):
    for mp in sorted_margin_pairs(m, n):
        blocks = count_via_permanent(mp, algorithm="blocks").count
        ryser = count_via_permanent(mp, algorithm="ryser").count
        assert blocks == ryser == enumerate_count(mp).count


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_weighted_permanent_against_enumeration(seed, weighted):
    rng = np.random.default_rng(seed)
    mp, pat = random_patterned(rng, max_cells=16, weighted=weighted)
    exact = enumerate_count(mp, pat).count
    blocks = count_via_permanent(mp, pat).count
    assert Fraction(blocks) == Fraction(exact)
    ryser = count_via_permanent(mp, pat, algorithm="ryser").count
    if exact:
        assert abs(float(ryser) / float(exact) - 1) <= 1e-8
    else:
        assert abs(float(ryser)) <= 1e-8


def test_block_permanent_matches_dense_float():
    rng = np.random.default_rng(3)
    alpha = rng.uniform(0.1, 1, (2, 3)).tolist()
    beta = rng.uniform(0.1, 1, (2, 3)).tolist()
    p, c = [1, 2], [1, 1, 1]
    dense = np.zeros((6, 6))
    row = 0
    for i, h in enumerate(p):
        for _ in range(h):
            dense[row, i * 3 : (i + 1) * 3] = alpha[i]
            row += 1
    for j, h in enumerate(c):
        for _ in range(h):
            for i in range(2):
                dense[row, i * 3 + j] = beta[i][j]
            row += 1
    assert block_permanent(alpha, beta, p, c) == pytest.approx(permanent_by_permutations(dense), rel=1e-12)


def test_count_tables_methods_agree_with_forced_lines():
    mp = MarginPair((3, 0, 2, 1), (2, 1, 2, 1))
    W = Pattern(np.array([[2, 1, 1, 1], [1, 1, 1, 1], [1, 1, 0.5, 1], [1, 1, 1, 1]], dtype=float))
    a = count_tables(mp, W, "enumerate").count
    b = count_tables(mp, W, "permanent").count
    assert Fraction(a) == Fraction(b) == Fraction(brute_count(mp.rows, mp.cols, W.W))


def test_small_size_sweep_oracles_agree():
    for mp in itertools.chain.from_iterable(sorted_margin_pairs(m, n) for m, n in SMALL_SIZES if m * n <= 12):
        assert count_via_permanent(mp).count == enumerate_count(mp).count


# -- scaling certificate -----------------------------------------------------------------------


def test_certificate_2x2_at_optimum():
    mp = MarginPair((1, 1), (1, 1))
    cert = scaling_certificate(mp, None, solve(mp).dual)
    assert cert.eps_row <= 1e-12
    assert cert.col_dev <= 1e-12
    assert np.allclose(cert.B[cert.B > 0], 0.5, atol=1e-15)
    assert cert.identity_residual <= 1e-12
    assert cert.floor_holds


@pytest.mark.parametrize("m,n", [(2, 3), (3, 3), (2, 4), (3, 4), (4, 4)])
def test_certificate_sweep(m, n):
    for mp in sorted_margin_pairs(m, n):
        if not interior_nonempty(mp):
            continue
        res = solve(mp)
        cert = scaling_certificate(mp, None, res.dual)
        assert cert.col_dev <= 1e-12
        assert cert.identity_residual <= 1e-8
        lo = min(min(n - r for r in mp.rows), min(mp.cols))
        assert cert.eps_row <= res.grad_inf_norm / lo + 1e-14
        if cert.eps_row < 1 / (m * n):
            assert cert.floor_holds


def test_certificate_with_unconverged_dual():
    mp = MarginPair((2, 1, 1), (1, 2, 1))
    rng = np.random.default_rng(0)
    from binmargin.entropy_solver import DualPoint

    d = DualPoint(rng.normal(size=3), rng.normal(size=3))
    cert = scaling_certificate(mp, None, d)
    assert cert.col_dev <= 1e-12
    assert cert.eps_row > 1e-3
    assert cert.identity_residual <= 1e-8
    assert cert.floor_holds is None


def test_certificate_weighted():
    mp = MarginPair((2, 1), (1, 1, 1))
    pat = Pattern([[1.5, 2.0, 0.5], [1.0, 0.25, 3.0]])
    cert = scaling_certificate(mp, pat, solve(mp, pat).dual)
    assert cert.col_dev <= 1e-12
    assert cert.identity_residual <= 1e-8


# -- generating function --------------------------------------------------------------------


def test_generating_function_examples():
    assert generating_function_check(2, 2) <= 1e-15
    W = Pattern([[0, 1], [1, 1]])
    assert generating_function_check(2, 2, W) <= 1e-15
    total = sum(
        enumerate_count(MarginPair(R, C), W).count
        for R in itertools.product(range(3), repeat=2)
        for C in itertools.product(range(3), repeat=2)
        if sum(R) == sum(C)
    )
    assert total == 8


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_generating_function_random_points(seed):
    rng = np.random.default_rng(seed)
    m, n = (int(v) for v in rng.integers(1, 4, size=2))
    W = Pattern(np.round(rng.uniform(0, 3, (m, n)), 1))
    x, y = rng.uniform(1e-6, 2, m), rng.uniform(1e-6, 2, n)
    assert generating_function_check(m, n, W, x, y) <= 1e-12


def test_generating_function_size_cap():
    with pytest.raises(InstanceTooLarge):
        generating_function_check(4, 2)
