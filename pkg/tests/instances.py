"""Instance families shared by the test modules."""

from __future__ import annotations

import itertools

import numpy as np

from binmargin.margins_core import MarginPair, Pattern, gale_ryser_feasible


def sorted_margin_pairs(m: int, n: int):
    """Every feasible (R, C) with nonincreasing R and C, no pattern.

    Counts, alpha and the bounds are invariant under permuting rows or
    columns, so this covers every margin pair up to symmetry.
    """
    rows_all = list(itertools.combinations_with_replacement(range(n, -1, -1), m))
    cols_all = list(itertools.combinations_with_replacement(range(m, -1, -1), n))
    by_sum: dict[int, list] = {}
    for C in cols_all:
        by_sum.setdefault(sum(C), []).append(C)
    for R in rows_all:
        for C in by_sum.get(sum(R), []):
            mp = MarginPair(R, C)
            if gale_ryser_feasible(mp):
                yield mp


def sweep(sizes):
    for m, n in sizes:
        yield from sorted_margin_pairs(m, n)


SANDWICH_SIZES = [(m, n) for m in range(2, 6) for n in range(2, 6)]
SMALL_SIZES = [(m, n) for m in range(2, 9) for n in range(2, 9) if m * n <= 16]


def random_patterned(rng: np.random.Generator, max_cells: int = 25, weighted: bool = False):
    """A random pattern, a random table inside it, and that table's margins."""
    while True:
        m = int(rng.integers(2, 6))
        n = int(rng.integers(2, 6))
        if m * n <= max_cells:
            break
    support = rng.random((m, n)) < rng.uniform(0.5, 0.95)
    D = (rng.random((m, n)) < rng.uniform(0.2, 0.8)) & support
    W = support.astype(float)
    if weighted:
        W = np.where(support, np.round(rng.uniform(0.25, 4.0, (m, n)) * 4) / 4, 0.0)
    return MarginPair(D.sum(axis=1), D.sum(axis=0)), Pattern(W)


def random_margins(rng: np.random.Generator, max_m: int = 6, max_n: int = 6, density=None) -> MarginPair:
    m = int(rng.integers(2, max_m + 1))
    n = int(rng.integers(2, max_n + 1))
    p = rng.uniform(0.15, 0.85) if density is None else density
    D = rng.random((m, n)) < p
    return MarginPair(D.sum(axis=1), D.sum(axis=0))


def sampler_instances():
    """The five designated instances for the sampler checks (one patterned)."""
    W = np.ones((3, 3))
    W[0, 0] = 0
    return [
        ("2x2 (1,1)", MarginPair((1, 1), (1, 1)), None),
        ("3x3 (1,1,1)", MarginPair((1, 1, 1), (1, 1, 1)), None),
        ("4x4 (2,2,2,2)", MarginPair((2, 2, 2, 2), (2, 2, 2, 2)), None),
        ("2x3 R=(2,1) C=(1,1,1)", MarginPair((2, 1), (1, 1, 1)), None),
        ("3x3 (1,1,1) w00=0", MarginPair((1, 1, 1), (1, 1, 1)), Pattern(W)),
    ]
