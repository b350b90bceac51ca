"""Problem instances: margins, weight patterns, boundary reduction, feasibility.

Every other module works on a :class:`MarginPair` plus an optional
:class:`Pattern`.  ``pattern=None`` always means the all-ones pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, maximum_flow


class MarginError(ValueError):
    """Base class for malformed instances."""


class DimensionMismatch(MarginError):
    pass


class MarginSumMismatch(MarginError):
    pass


class MarginOutOfRange(MarginError):
    pass


class IndexOutOfRange(MarginError):
    pass


class Infeasible(ValueError):
    """No 0-1 matrix satisfies the margins (and pattern)."""


@dataclass(frozen=True)
class MarginPair:
    rows: tuple[int, ...]
    cols: tuple[int, ...]

    def __init__(self, rows: Iterable[int], cols: Iterable[int]):
        rows = tuple(_as_count(v) for v in rows)
        cols = tuple(_as_count(v) for v in cols)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    @property
    def m(self) -> int:
        return len(self.rows)

    @property
    def n(self) -> int:
        return len(self.cols)

    @property
    def N(self) -> int:
        return sum(self.rows)

    def transpose(self) -> "MarginPair":
        return MarginPair(self.cols, self.rows)

    def to_json(self) -> dict:
        return {"rows": list(self.rows), "cols": list(self.cols)}


def _as_count(v) -> int:
    iv = int(v)
    if iv != v or iv < 0:
        raise MarginOutOfRange(f"margin entries must be nonnegative integers, got {v!r}")
    return iv


@dataclass(frozen=True, eq=False)
class Pattern:
    """Nonnegative weight matrix; a 0-1 pattern forbids the zero cells."""

    W: np.ndarray

    def __init__(self, W):
        W = np.array(W, dtype=float)
        if W.ndim != 2:
            raise DimensionMismatch("pattern must be a 2-d matrix")
        if not np.all(np.isfinite(W)) or np.any(W < 0):
            raise MarginOutOfRange("pattern weights must be finite and nonnegative")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @classmethod
    def ones(cls, m: int, n: int) -> "Pattern":
        return cls(np.ones((m, n)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.W == 0) | (self.W == 1)))

    @property
    def support(self) -> np.ndarray:
        return self.W != 0

    def transpose(self) -> "Pattern":
        return Pattern(self.W.T)

    def __eq__(self, other):
        return isinstance(other, Pattern) and np.array_equal(self.W, other.W)

    def __hash__(self):
        return hash((self.W.shape, self.W.tobytes()))


def weights_of(margins: MarginPair, pattern: Pattern | None) -> np.ndarray:
    """Dense weight matrix for an instance (all ones without a pattern)."""
    if pattern is None:
        return np.ones((margins.m, margins.n))
    if pattern.shape != (margins.m, margins.n):
        raise DimensionMismatch(
            f"pattern shape {pattern.shape} does not match {margins.m}x{margins.n} margins"
        )
    return pattern.W


@dataclass(frozen=True)
class SubsetIndex:
    """A set of cell coordinates, 0-based."""

    cells: frozenset

    def __init__(self, cells: Iterable[Sequence[int]]):
        object.__setattr__(self, "cells", frozenset((int(i), int(j)) for i, j in cells))

    @classmethod
    def parse(cls, spec: str, m: int, n: int) -> "SubsetIndex":
        """Parse ``all``, ``row:i``, ``col:j``, ``block:i0,i1,j0,j1`` (half-open)
        or an explicit ``i,j;i,j;...`` cell list."""
        spec = spec.strip()
        if spec == "all":
            return cls((i, j) for i in range(m) for j in range(n))
        kind, _, arg = spec.partition(":")
        if kind == "row" and arg:
            i = int(arg)
            return cls((i, j) for j in range(n))
        if kind == "col" and arg:
            j = int(arg)
            return cls((i, j) for i in range(m))
        if kind == "block" and arg:
            i0, i1, j0, j1 = (int(v) for v in arg.split(","))
            return cls((i, j) for i in range(i0, i1) for j in range(j0, j1))
        try:
            cells = [tuple(int(v) for v in part.split(",")) for part in spec.split(";") if part]
        except ValueError:
            raise MarginError(f"cannot parse subset {spec!r}") from None
        if any(len(c) != 2 for c in cells):
            raise MarginError(f"cannot parse subset {spec!r}")
        return cls(cells)

    def mask(self, m: int, n: int) -> np.ndarray:
        out = np.zeros((m, n), dtype=bool)
        for i, j in self.cells:
            if not (0 <= i < m and 0 <= j < n):
                raise IndexOutOfRange(f"cell {(i, j)} outside a {m}x{n} matrix")
            out[i, j] = True
        return out

    def check_pattern(self, pattern: Pattern | None) -> None:
        if pattern is None:
            return
        m, n = pattern.shape
        mask = self.mask(m, n)
        if np.any(mask & ~pattern.support):
            raise IndexOutOfRange("subset contains cells outside the pattern support")

    def __len__(self) -> int:
        return len(self.cells)


def sigma_S(matrix, S: SubsetIndex) -> float:
    """Sum of the entries of ``matrix`` indexed by ``S``."""
    A = np.asarray(matrix)
    m, n = A.shape
    return float(A[S.mask(m, n)].sum())


def check_table(table, margins: MarginPair, pattern: Pattern | None = None) -> bool:
    """True iff ``table`` is a 0-1 matrix with the given margins, zero off the pattern."""
    D = np.asarray(table)
    if D.shape != (margins.m, margins.n):
        return False
    if not np.all((D == 0) | (D == 1)):
        return False
    if pattern is not None and np.any(D[~pattern.support] != 0):
        return False
    return (
        D.sum(axis=1).tolist() == list(margins.rows)
        and D.sum(axis=0).tolist() == list(margins.cols)
    )


def check_shape(margins: MarginPair, pattern: Pattern | None) -> None:
    weights_of(margins, pattern)


def check_sums(margins: MarginPair) -> None:
    if sum(margins.rows) != sum(margins.cols):
        raise MarginSumMismatch(
            f"row sums total {sum(margins.rows)} but column sums total {sum(margins.cols)}"
        )


def check_ranges(margins: MarginPair) -> None:
    for i, r in enumerate(margins.rows):
        if r > margins.n:
            raise MarginOutOfRange(f"row {i} sum {r} exceeds column count {margins.n}")
    for j, c in enumerate(margins.cols):
        if c > margins.m:
            raise MarginOutOfRange(f"column {j} sum {c} exceeds row count {margins.m}")


# -- boundary reduction -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class ValidatedInstance:
    """An instance after validation and pinning of forced lines.

    ``reduced`` keeps only rows/columns that still have free cells; every
    remaining line satisfies ``0 < residual < free cells``.  ``fixed`` holds
    the pinned value of each cell (-1 where the cell survives into the
    reduced instance).  The weighted count of the original instance equals
    ``forced_weight`` times the count of the reduced one.
    """

    margins: MarginPair
    pattern: Pattern | None
    reduced: MarginPair
    reduced_pattern: Pattern | None
    row_index: tuple[int, ...]
    col_index: tuple[int, ...]
    fixed: np.ndarray = field(repr=False)
    forced_weight: float

    @property
    def is_reduced(self) -> bool:
        return self.reduced.m != self.margins.m or self.reduced.n != self.margins.n

    @property
    def is_trivial(self) -> bool:
        return self.reduced.m == 0 and self.reduced.n == 0

    def lift(self, reduced_table) -> np.ndarray:
        """Embed a table of the reduced instance into the original shape."""
        D = np.where(self.fixed == 1, 1, 0).astype(np.int8)
        R = np.asarray(reduced_table)
        if R.size:
            D[np.ix_(self.row_index, self.col_index)] = R
        return D

    def to_json(self) -> dict:
        out = {
            "rows": list(self.reduced.rows),
            "cols": list(self.reduced.cols),
            "row_index": list(self.row_index),
            "col_index": list(self.col_index),
            "pinned_ones": int(np.sum(self.fixed == 1)),
            "forced_weight": self.forced_weight,
        }
        if self.reduced_pattern is not None:
            out["weights"] = self.reduced_pattern.W.tolist()
        return out


def validate(margins: MarginPair, pattern: Pattern | None = None) -> ValidatedInstance:
    """Check an instance and pin every line whose residual is 0 or fills its free cells.

    Pinning is repeated until no line changes.  Raises :class:`Infeasible`
    when a residual goes negative or exceeds the free cells of its line.
    """
    W = weights_of(margins, pattern)
    check_sums(margins)
    check_ranges(margins)
    m, n = margins.m, margins.n

    free = W != 0
    fixed = np.full((m, n), -1, dtype=np.int8)
    fixed[~free] = 0
    r = np.array(margins.rows, dtype=np.int64)
    c = np.array(margins.cols, dtype=np.int64)

    changed = True
    while changed:
        changed = False
        for axis in (1, 0):
            need = r if axis == 1 else c
            nfree = free.sum(axis=axis)
            for k in range(len(need)):
                if nfree[k] == 0:
                    if need[k] != 0:
                        raise Infeasible(_line_name(axis, k) + " cannot reach its sum")
                    continue
                if need[k] < 0 or need[k] > nfree[k]:
                    raise Infeasible(_line_name(axis, k) + " cannot reach its sum")
                if need[k] == 0 or need[k] == nfree[k]:
                    value = 0 if need[k] == 0 else 1
                    cells = np.flatnonzero(free[k] if axis == 1 else free[:, k])
                    for other in cells:
                        i, j = (k, other) if axis == 1 else (other, k)
                        fixed[i, j] = value
                        free[i, j] = False
                        if value:
                            r[i] -= 1
                            c[j] -= 1
                    changed = True

    row_index = tuple(int(i) for i in np.flatnonzero(free.any(axis=1)))
    col_index = tuple(int(j) for j in np.flatnonzero(free.any(axis=0)))
    reduced = MarginPair(r[list(row_index)], c[list(col_index)])
    if pattern is None:
        reduced_pattern = None
    else:
        sub = np.where(free, W, 0.0)[np.ix_(row_index, col_index)]
        reduced_pattern = Pattern(sub)
        if reduced_pattern.is_binary and np.all(sub == 1):
            reduced_pattern = None
    forced_weight = float(np.prod(W[fixed == 1])) if np.any(fixed == 1) else 1.0
    fixed.setflags(write=False)
    return ValidatedInstance(
        margins=margins,
        pattern=pattern,
        reduced=reduced,
        reduced_pattern=reduced_pattern,
        row_index=row_index,
        col_index=col_index,
        fixed=fixed,
        forced_weight=forced_weight,
    )


def _line_name(axis: int, k: int) -> str:
    return f"row {k}" if axis == 1 else f"column {k}"


# -- feasibility --------------------------------------------------------------


def conjugate(values: Sequence[int], length: int) -> list[int]:
    """``out[k-1] = #{v >= k}`` for ``k = 1..length``."""
    return [sum(1 for v in values if v >= k) for k in range(1, length + 1)]


def gale_ryser_feasible(margins: MarginPair) -> bool:
    """Gale-Ryser test: sorted row sums are dominated by the conjugate of the column sums."""
    if sum(margins.rows) != sum(margins.cols):
        return False
    if any(r > margins.n for r in margins.rows) or any(c > margins.m for c in margins.cols):
        return False
    rows = sorted(margins.rows, reverse=True)
    conj = conjugate(margins.cols, margins.m)
    lhs = rhs = 0
    for k in range(margins.m):
        lhs += rows[k]
        rhs += conj[k]
        if lhs > rhs:
            return False
    return True


def _flow_graph(r, c, support):
    m, n = support.shape
    src, sink = 0, m + n + 1
    heads, tails, caps = [], [], []
    for i in range(m):
        if r[i] > 0:
            heads.append(src), tails.append(1 + i), caps.append(r[i])
    ii, jj = np.nonzero(support)
    heads.extend((1 + ii).tolist())
    tails.extend((1 + m + jj).tolist())
    caps.extend([1] * len(ii))
    for j in range(n):
        if c[j] > 0:
            heads.append(1 + m + j), tails.append(sink), caps.append(c[j])
    size = m + n + 2
    graph = csr_matrix(
        (np.array(caps, dtype=np.int32), (np.array(heads), np.array(tails))),
        shape=(size, size),
    )
    return graph, src, sink


def find_table(margins: MarginPair, pattern: Pattern | None = None) -> np.ndarray | None:
    """One table of the instance via bipartite max-flow, or ``None`` if there is none."""
    W = weights_of(margins, pattern)
    m, n = margins.m, margins.n
    if sum(margins.rows) != sum(margins.cols):
        return None
    if margins.N == 0:
        return np.zeros((m, n), dtype=np.int8)
    if any(v < 0 for v in margins.rows + margins.cols):
        return None
    support = W != 0
    graph, src, sink = _flow_graph(margins.rows, margins.cols, support)
    result = maximum_flow(graph, src, sink)
    if result.flow_value != margins.N:
        return None
    flow = result.flow.toarray()
    return (flow[1 : 1 + m, 1 + m : 1 + m + n] > 0).astype(np.int8)


def pattern_feasible(margins: MarginPair, pattern: Pattern | None = None) -> bool:
    """True iff some 0-1 table fits the margins inside the support of ``pattern``."""
    return find_table(margins, pattern) is not None


def _forced_feasible(margins: MarginPair, support: np.ndarray, k: int, l: int, value: int) -> bool:
    sub = support.copy()
    sub[k, l] = False
    rows, cols = list(margins.rows), list(margins.cols)
    if value:
        rows[k] -= 1
        cols[l] -= 1
        if rows[k] < 0 or cols[l] < 0:
            return False
    return pattern_feasible(MarginPair(rows, cols), Pattern(sub.astype(float)))


def interior_nonempty(margins: MarginPair, pattern: Pattern | None = None) -> bool:
    """Every support cell takes both values 0 and 1 across the tables.

    Decided cell by cell with two forced max-flow problems.
    """
    W = weights_of(margins, pattern)
    support = W != 0
    if not pattern_feasible(margins, pattern):
        return False
    for k, l in zip(*np.nonzero(support)):
        if not _forced_feasible(margins, support, k, l, 1):
            return False
        if not _forced_feasible(margins, support, k, l, 0):
            return False
    return True


FREE = -1


def cell_status(margins: MarginPair, pattern: Pattern | None = None) -> np.ndarray:
    """Per-cell value shared by all tables (0 or 1), or ``FREE`` when both occur.

    Takes one feasible table D and orients each support cell row->col when
    d=1 and col->row when d=0.  Two tables differ by alternating cycles of
    this digraph, so a cell can flip iff its endpoints share a strongly
    connected component.
    """
    W = weights_of(margins, pattern)
    D = find_table(margins, pattern)
    if D is None:
        raise Infeasible("instance has no table")
    m, n = margins.m, margins.n
    support = W != 0
    ii, jj = np.nonzero(support)
    ones = D[ii, jj] == 1
    src = np.where(ones, ii, m + jj)
    dst = np.where(ones, m + jj, ii)
    graph = csr_matrix((np.ones(len(ii)), (src, dst)), shape=(m + n, m + n))
    _, labels = connected_components(graph, directed=True, connection="strong")
    status = np.where(support, D, 0).astype(np.int8)
    same = labels[ii] == labels[m + jj]
    status[ii[same], jj[same]] = FREE
    return status
