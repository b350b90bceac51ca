"""Ground-truth counts at desk scale.

Two independent routes: depth-first enumeration over rows, and the
permanent of the mn x mn block matrix whose permanent, divided by
prod (n - r_i)! prod c_j!, is the (weighted) number of tables.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import mpmath
import numpy as np

from binmargin._kernels import ryser_float, ryser_mod
from binmargin.entropy_solver import DualPoint
from binmargin.margins_core import (
    Infeasible,
    MarginPair,
    Pattern,
    check_ranges,
    check_sums,
    validate,
    weights_of,
)


class SearchBudgetExceeded(RuntimeError):
    pass


class InstanceTooLarge(ValueError):
    pass


class InexactDivision(ArithmeticError):
    """per A was not divisible by the factorial product: an implementation bug."""


DEFAULT_NODE_BUDGET = 5_000_000
MAX_RYSER_SIZE = 28

# primes just below 2**31; residues multiply without overflowing int64
_PRIMES = np.array(
    [
        2147483647, 2147483629, 2147483587, 2147483579, 2147483563, 2147483549,
        2147483543, 2147483497, 2147483489, 2147483477, 2147483423, 2147483399,
        2147483353, 2147483323, 2147483269, 2147483249,
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class ExactCount:
    count: int | Fraction
    method: str

    def __int__(self) -> int:
        return int(self.count)

    def log(self) -> float:
        if self.count <= 0:
            return -math.inf
        if isinstance(self.count, Fraction):
            return math.log(self.count.numerator) - math.log(self.count.denominator)
        return math.log(self.count)

    def to_json(self) -> dict:
        if isinstance(self.count, Fraction):
            return {"count": repr(float(self.count)), "count_exact": str(self.count), "method": self.method}
        return {"count": str(self.count), "method": self.method}


# -- enumeration --------------------------------------------------------------


def _is_plain(W: np.ndarray) -> bool:
    return bool(np.all(W == 1))


def _is_binary(W: np.ndarray) -> bool:
    return bool(np.all((W == 0) | (W == 1)))


def _residual_gale_ryser(rows: tuple[int, ...], cols: tuple[int, ...]) -> bool:
    # rows sorted descending
    lhs = 0
    for k, r in enumerate(rows, start=1):
        lhs += r
        if lhs > sum(min(c, k) for c in cols):
            return False
    return True


class _Enumerator:
    """Depth-first search over rows; completions are memoised on the residual
    column sums.  Without a pattern, columns are interchangeable, so the
    residual is kept sorted."""

    def __init__(self, margins: MarginPair, W: np.ndarray, budget: int):
        self.plain = _is_plain(W)
        self.binary = _is_binary(W)
        if self.plain:
            self.rows = tuple(sorted(margins.rows, reverse=True))
        else:
            self.rows = margins.rows
        self.m, self.n = margins.m, margins.n
        self.weights = [[Fraction(float(w)) for w in row] for row in W]
        self.allowed = [tuple(int(j) for j in np.flatnonzero(W[i])) for i in range(self.m)]
        # rows_left[i][j]: rows k >= i that may still put a one in column j
        support = (W != 0).astype(int)
        tail = np.cumsum(support[::-1], axis=0)[::-1]
        self.rows_left = np.vstack([tail, np.zeros((1, self.n), dtype=int)]).tolist()
        self.budget = budget
        self.nodes = 0
        self.memo: dict = {}
        self.zero = 0 if self.binary else Fraction(0)

    def key(self, i: int, residual: tuple[int, ...]):
        return (i, tuple(sorted(residual, reverse=True))) if self.plain else (i, residual)

    def viable(self, i: int, residual: tuple[int, ...]) -> bool:
        if self.plain:
            return _residual_gale_ryser(self.rows[i:], residual)
        left = self.rows_left[i]
        return all(c <= left[j] for j, c in enumerate(residual))

    def choices(self, i: int, residual: tuple[int, ...]):
        open_cols = [j for j in self.allowed[i] if residual[j] > 0]
        return itertools.combinations(open_cols, self.rows[i])

    def step(self, residual: tuple[int, ...], chosen) -> tuple[int, ...]:
        out = list(residual)
        for j in chosen:
            out[j] -= 1
        return tuple(out)

    def weight(self, i: int, chosen):
        if self.binary:
            return 1
        w = Fraction(1)
        for j in chosen:
            w *= self.weights[i][j]
        return w

    def count(self, i: int, residual: tuple[int, ...]):
        if i == self.m:
            return 1 if not any(residual) else self.zero
        # every visit is charged, memo hits included, so the budget bounds run time
        self.nodes += 1
        if self.nodes > self.budget:
            raise SearchBudgetExceeded(f"enumeration exceeded {self.budget} search nodes")
        if self.plain:
            residual = tuple(sorted(residual, reverse=True))
        k = (i, residual)
        hit = self.memo.get(k)
        if hit is not None:
            return hit
        total = self.zero
        if self.viable(i, residual):
            for chosen in self.choices(i, residual):
                total += self.weight(i, chosen) * self.count(i + 1, self.step(residual, chosen))
        self.memo[k] = total
        return total


def _check(margins: MarginPair, pattern: Pattern | None) -> np.ndarray:
    W = weights_of(margins, pattern)
    check_sums(margins)
    check_ranges(margins)
    return W


def _branch_count(args):
    margins, W, budget, first = args
    e = _Enumerator(margins, W, budget)
    residual = e.step(tuple(margins.cols) if not e.plain else tuple(sorted(margins.cols, reverse=True)), first)
    return e.weight(0, first) * e.count(1, residual)


def enumerate_count(
    margins: MarginPair,
    pattern: Pattern | None = None,
    budget: int = DEFAULT_NODE_BUDGET,
    workers: int = 1,
) -> ExactCount:
    """Exact (weighted) number of tables by pruned depth-first search.

    Weighted patterns accumulate exact rationals.  With ``workers > 1`` the
    first-row choices are split across processes; the sum is taken in the
    same order either way, so the result does not depend on ``workers``.
    """
    W = _check(margins, pattern)
    if margins.m == 0:
        return ExactCount(1, "enumeration")
    e = _Enumerator(margins, W, budget)
    cols = tuple(margins.cols)
    if e.plain:
        cols = tuple(sorted(cols, reverse=True))
    if workers <= 1:
        total = e.count(0, cols)
    else:
        firsts = list(e.choices(0, cols)) if e.viable(0, cols) else []
        jobs = [(margins if not e.plain else MarginPair(e.rows, cols), W, budget, f) for f in firsts]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_branch_count, jobs))
        total = e.zero
        for part in parts:
            total += part
    return ExactCount(total, "enumeration")


def enumerate_tables(
    margins: MarginPair,
    pattern: Pattern | None = None,
    limit: int | None = None,
    budget: int = DEFAULT_NODE_BUDGET,
) -> Iterator[np.ndarray]:
    """Yield every table (up to ``limit``) in lexicographic row-choice order."""
    W = _check(margins, pattern)
    m, n = margins.m, margins.n
    if m == 0:
        yield np.zeros((0, n), dtype=np.int8)
        return
    # rows kept in input order here, so use a non-sorting counter for pruning
    plain = _is_plain(W)
    e = _Enumerator(margins, W, budget)
    e.plain = False
    e.rows = margins.rows
    if plain:
        # completions only depend on the multiset of residuals and the
        # remaining (unsorted) rows, so the pattern-free bound is exact enough
        e.viable = lambda i, res: _residual_gale_ryser(tuple(sorted(margins.rows[i:], reverse=True)), res)

    D = np.zeros((m, n), dtype=np.int8)
    emitted = 0

    def walk(i: int, residual: tuple[int, ...]):
        nonlocal emitted
        if i == m:
            yield D.copy()
            return
        for chosen in e.choices(i, residual):
            nxt = e.step(residual, chosen)
            if e.count(i + 1, nxt) == 0:
                continue
            D[i, :] = 0
            D[i, list(chosen)] = 1
            yield from walk(i + 1, nxt)
        D[i, :] = 0

    for table in walk(0, tuple(margins.cols)):
        yield table
        emitted += 1
        if limit is not None and emitted >= limit:
            return


def count_tables(margins: MarginPair, pattern: Pattern | None = None, method: str = "enumerate", **kw) -> ExactCount:
    """Count after boundary reduction; zero when the instance is infeasible."""
    try:
        inst = validate(margins, pattern)
    except Infeasible:
        return ExactCount(0, method)
    if inst.is_trivial:
        core = ExactCount(1, "enumeration" if method == "enumerate" else method)
    elif method == "enumerate":
        core = enumerate_count(inst.reduced, inst.reduced_pattern, **kw)
    elif method == "permanent":
        core = count_via_permanent(inst.reduced, inst.reduced_pattern, **kw)
    else:
        raise ValueError(f"unknown counting method {method!r}")
    scale = inst.forced_weight
    if scale == 1.0:
        return ExactCount(core.count, core.method)
    return ExactCount(Fraction(core.count) * Fraction(scale), core.method)


# -- permanents -----------------------------------------------------------------


@dataclass(frozen=True)
class RowBlock:
    kind: str  # "I" or "II"
    index: int
    start: int
    size: int


@dataclass(frozen=True, eq=False)
class PermanentConstruction:
    """The mn x mn matrix A(R, C; W).

    Rows: m type-I blocks of sizes n - r_i, then n type-II blocks of sizes
    c_j.  Columns: m blocks of n columns, column (i, j) at index i*n + j.
    Type-I block i has ones across column block i; type-II block j has
    w_ij in column (i, j) for every i.
    """

    A: np.ndarray = field(repr=False)
    row_blocks: tuple[RowBlock, ...]
    col_blocks: tuple[tuple[int, int], ...]
    margins: MarginPair
    weights: np.ndarray = field(repr=False)


def build_permanent_matrix(
    margins: MarginPair, pattern: Pattern | None = None, max_size: int | None = MAX_RYSER_SIZE
) -> PermanentConstruction:
    W = _check(margins, pattern)
    m, n = margins.m, margins.n
    size = m * n
    if max_size is not None and size > max_size:
        raise InstanceTooLarge(f"mn = {size} exceeds the permanent size cap {max_size}")
    A = np.zeros((size, size), dtype=float if not _is_binary(W) else np.int64)
    blocks = []
    row = 0
    for i in range(m):
        h = n - margins.rows[i]
        A[row : row + h, i * n : (i + 1) * n] = 1
        blocks.append(RowBlock("I", i, row, h))
        row += h
    for j in range(n):
        h = margins.cols[j]
        for i in range(m):
            A[row : row + h, i * n + j] = W[i, j]
        blocks.append(RowBlock("II", j, row, h))
        row += h
    col_blocks = tuple((i * n, n) for i in range(m))
    return PermanentConstruction(A, tuple(blocks), col_blocks, margins, W)


def _crt(residues: list[int], moduli: list[int]) -> int:
    x, M = 0, 1
    for a, p in zip(residues, moduli):
        # x = a mod p, x = x mod M
        t = ((a - x) * pow(M, -1, p)) % p
        x += M * t
        M *= p
    return x if 2 * x <= M else x - M


def _ryser_python(A: list[list[int]]) -> int:
    N = len(A)
    total = 0
    for mask in range(1, 1 << N):
        cols = [j for j in range(N) if mask >> j & 1]
        prod = 1
        for row in A:
            prod *= sum(row[j] for j in cols)
            if not prod:
                break
        total += (-1) ** (N - len(cols)) * prod
    return total


def ryser_permanent(M) -> int | float:
    """Permanent by Ryser's inclusion-exclusion over column subsets (Gray-code order).

    Integer matrices give an exact Python int (computed modulo several
    primes and recombined); anything else is evaluated in double precision.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("permanent needs a square matrix")
    N = M.shape[0]
    if N == 0:
        return 1
    if N > MAX_RYSER_SIZE:
        raise InstanceTooLarge(f"{N}x{N} exceeds the Ryser size cap {MAX_RYSER_SIZE}")
    integral = M.dtype.kind in "iub" or (
        M.dtype.kind == "f" and np.all(np.isfinite(M)) and np.all(M == np.round(M))
    )
    if not integral:
        return float(ryser_float(np.ascontiguousarray(M, dtype=float)))
    ints = [[int(v) for v in row] for row in M]
    bound = 1
    for row in ints:
        bound *= sum(abs(v) for v in row)
    if bound == 0:
        return 0
    primes, prod = [], 1
    for p in _PRIMES.tolist():
        primes.append(p)
        prod *= p
        if prod > 2 * bound:
            break
    big = max(abs(v) for row in ints for v in row)
    if prod <= 2 * bound or big * N >= 2**62:
        return _ryser_python(ints)
    res = ryser_mod(np.array(ints, dtype=np.int64), np.array(primes, dtype=np.int64))
    return _crt([int(v) for v in res], primes)


def block_permanent(alpha, beta, type1_sizes, type2_sizes):
    """Permanent of a block-structured matrix via Ryser's formula over rows.

    Rows of a block are identical, so a row subset is described by how many
    rows it takes from each block (binomial multiplicity).  For a fixed
    choice l_j from the type-II blocks, the type-I choices factor over i:

        per = sum_l prod_j C(c_j, l_j) (-1)^(c_j - l_j) prod_i g_i(l)
        g_i(l) = sum_k C(p_i, k) (-1)^(p_i - k) prod_j (k alpha_ij + l_j beta_ij)

    ``alpha``/``beta`` are m x n nested sequences of any exact or
    high-precision numeric type; the arithmetic stays in that type.  The
    same sum can be grouped the other way round (outer loop over the
    type-I choices), which is used when that has fewer terms.
    """
    m = len(type1_sizes)
    n = len(type2_sizes)
    if math.prod(p + 1 for p in type1_sizes) < math.prod(c + 1 for c in type2_sizes):
        alpha_t = [[beta[i][j] for i in range(m)] for j in range(n)]
        beta_t = [[alpha[i][j] for i in range(m)] for j in range(n)]
        return block_permanent(alpha_t, beta_t, list(type2_sizes), list(type1_sizes))
    total = 0
    for l in itertools.product(*(range(c + 1) for c in type2_sizes)):
        coef = 1
        for j, c in enumerate(type2_sizes):
            coef *= math.comb(c, l[j]) * (-1) ** (c - l[j])
        term = coef
        for i in range(m):
            p = type1_sizes[i]
            g = 0
            a_i, b_i = alpha[i], beta[i]
            for k in range(p + 1):
                prod = math.comb(p, k) * (-1) ** (p - k)
                for j in range(n):
                    prod *= k * a_i[j] + l[j] * b_i[j]
                    if not prod:
                        break
                g += prod
            term *= g
            if not term:
                break
        total += term
    return total


def block_terms(margins: MarginPair) -> int:
    """Number of outer terms block_permanent needs (cheaper grouping)."""
    return min(math.prod(c + 1 for c in margins.cols), math.prod(margins.n - r + 1 for r in margins.rows))


def _factorial_product(margins: MarginPair) -> int:
    out = 1
    for r in margins.rows:
        out *= math.factorial(margins.n - r)
    for c in margins.cols:
        out *= math.factorial(c)
    return out


def permanent_of_construction(con: PermanentConstruction, algorithm: str = "blocks"):
    """per A, exact (int for 0-1 weights, Fraction otherwise) for ``blocks``."""
    margins, W = con.margins, con.weights
    if algorithm == "ryser":
        return ryser_permanent(con.A)
    if algorithm != "blocks":
        raise ValueError(f"unknown permanent algorithm {algorithm!r}")
    binary = _is_binary(W)
    conv = int if binary else (lambda v: Fraction(float(v)))
    alpha = [[1] * margins.n for _ in range(margins.m)]
    beta = [[conv(w) for w in row] for row in W]
    return block_permanent(alpha, beta, [margins.n - r for r in margins.rows], list(margins.cols))


def count_via_permanent(
    margins: MarginPair,
    pattern: Pattern | None = None,
    algorithm: str = "blocks",
    max_terms: int = 2_000_000,
) -> ExactCount:
    """|Sigma(R, C; W)| = per A / (prod (n - r_i)! prod c_j!).

    ``blocks`` evaluates per A with the block-structured Ryser sum;
    ``ryser`` runs the generic Gray-code Ryser on the dense A.
    """
    W = _check(margins, pattern)
    if margins.m == 0:
        return ExactCount(1, "permanent")
    if algorithm == "blocks":
        if block_terms(margins) > max_terms:
            raise InstanceTooLarge(f"block permanent needs {block_terms(margins)} terms (cap {max_terms})")
        con = build_permanent_matrix(margins, Pattern(W), max_size=None)
    else:
        con = build_permanent_matrix(margins, Pattern(W))
    per = permanent_of_construction(con, algorithm)
    denom = _factorial_product(margins)
    if isinstance(per, int):
        q, rem = divmod(per, denom)
        if rem:
            raise InexactDivision(f"per A = {per} is not divisible by {denom}")
        return ExactCount(q, "permanent")
    if isinstance(per, Fraction):
        return ExactCount(per / denom, "permanent")
    return ExactCount(Fraction(per) / denom, "permanent")


# -- scaling certificate ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalingCertificate:
    B: np.ndarray = field(repr=False)
    eps_row: float
    col_dev: float
    duals_used: DualPoint
    per_B: float | None = None
    identity_residual: float | None = None
    per_B_floor: float | None = None
    floor_holds: bool | None = None

    def to_json(self) -> dict:
        return {
            "eps_row": self.eps_row,
            "col_dev": self.col_dev,
            "per_B": self.per_B,
            "identity_residual": self.identity_residual,
            "per_B_floor": self.per_B_floor,
            "floor_holds": self.floor_holds,
        }


def _scaled_entries(margins, W, s, t, exp, log1pexp):
    """Type-I entry 1/((n-r_i)(1+w x y)) and type-II entry w x y/(c_j (1+w x y))."""
    m, n = margins.m, margins.n
    alpha = [[0] * n for _ in range(m)]
    beta = [[0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            w = W[i][j]
            if w > 0:
                u = s[i] + t[j] + math.log(w)
                soft = log1pexp(u)
                one_minus_z = exp(-soft)
                z = exp(u - soft)
            else:
                one_minus_z, z = 1, 0
            p = margins.n - margins.rows[i]
            alpha[i][j] = one_minus_z / p if p else 0
            beta[i][j] = z / margins.cols[j] if margins.cols[j] else 0
    return alpha, beta


def scaling_certificate(
    margins: MarginPair,
    pattern: Pattern | None = None,
    dual: DualPoint | None = None,
    permanent_max_size: int = 20,
    dps: int = 50,
) -> ScalingCertificate:
    """Rescale A by the three factor families built from the dual point.

    Rows of type-I block i get 1/(x_i (n - r_i)), rows of type-II block j get
    y_j / c_j, column (i, j) gets x_i / (1 + w_ij x_i y_j).  Columns of B
    then sum to exactly one and row sums deviate from one by the dual
    gradient.  For mn up to ``permanent_max_size`` per B is computed in
    ``dps``-digit arithmetic and the permanent identity and the near-doubly
    stochastic lower bound with phi(eps) = (1 - eps mn)^mn are checked.
    """
    W = _check(margins, pattern)
    m, n = margins.m, margins.n
    if dual is None:
        dual = DualPoint.zeros(m, n)
    con = build_permanent_matrix(margins, Pattern(W), max_size=None)
    A = con.A.astype(float)
    s, t = dual.s, dual.t

    log_row = np.empty(A.shape[0])
    for blk in con.row_blocks:
        if blk.kind == "I":
            val = -s[blk.index] - math.log(n - margins.rows[blk.index]) if blk.size else 0.0
        else:
            val = t[blk.index] - math.log(margins.cols[blk.index]) if blk.size else 0.0
        log_row[blk.start : blk.start + blk.size] = val
    with np.errstate(divide="ignore"):
        logw = np.where(W > 0, np.log(np.where(W > 0, W, 1.0)), -np.inf)
    u = s[:, None] + t[None, :] + logw
    log_col = (s[:, None] - np.logaddexp(0.0, u)).reshape(-1)
    B = np.zeros_like(A)
    nz = A > 0
    with np.errstate(divide="ignore"):
        logA = np.log(np.where(nz, A, 1.0))
    B[nz] = np.exp((logA + log_row[:, None] + log_col[None, :])[nz])

    eps_row = float(np.abs(B.sum(axis=1) - 1.0).max(initial=0.0))
    col_dev = float(np.abs(B.sum(axis=0) - 1.0).max(initial=0.0))

    size = m * n
    if size > permanent_max_size:
        return ScalingCertificate(B, eps_row, col_dev, dual)

    with mpmath.workdps(dps):
        mp_s = [mpmath.mpf(float(v)) for v in s]
        mp_t = [mpmath.mpf(float(v)) for v in t]
        alpha, beta = _scaled_entries(
            margins, [[float(w) for w in row] for row in W], mp_s, mp_t, mpmath.exp,
            lambda v: mpmath.log1p(mpmath.exp(v)) if v < 0 else v + mpmath.log1p(mpmath.exp(-v)),
        )
        per_B = block_permanent(alpha, beta, [n - r for r in margins.rows], list(margins.cols))
        per_A = permanent_of_construction(con, "blocks")
        if isinstance(per_A, Fraction):
            per_A = mpmath.mpf(per_A.numerator) / per_A.denominator
        per_A = mpmath.mpf(per_A)
        log_factor = mpmath.mpf(0)
        for i in range(m):
            p = n - margins.rows[i]
            if p:
                log_factor += p * (mp_s[i] + mpmath.log(p))
        for j in range(n):
            c = margins.cols[j]
            if c:
                log_factor += c * (mpmath.log(c) - mp_t[j])
        for i in range(m):
            for j in range(n):
                w = float(W[i, j])
                term = mpmath.log1p(w * mpmath.exp(mp_s[i] + mp_t[j])) if w > 0 else 0
                log_factor += term - mp_s[i]
        if per_A > 0:
            residual = float(abs(1 - mpmath.exp(log_factor) * per_B / per_A))
        else:
            residual = float(abs(per_B))
        per_B_f = float(per_B)
        bound = None
        holds = None
        if eps_row < 1.0 / size:
            bound = float(
                mpmath.factorial(size) / mpmath.mpf(size) ** size * (1 - mpmath.mpf(eps_row) * size) ** size
            )
            holds = per_B_f >= bound
    return ScalingCertificate(B, eps_row, col_dev, dual, per_B_f, residual, bound, holds)


# -- generating function ----------------------------------------------------------


def generating_function_check(
    m: int, n: int, pattern: Pattern | None = None, x=None, y=None
) -> float:
    """Relative gap between prod (1 + w_ij x_i y_j) and
    sum over all margins of |Sigma(R, C; W)| x^R y^C."""
    if m > 3 or n > 3:
        raise InstanceTooLarge("the full margin lattice is only enumerated for m, n <= 3")
    W = np.ones((m, n)) if pattern is None else pattern.W
    x = np.ones(m) if x is None else np.asarray(x, dtype=float)
    y = np.ones(n) if y is None else np.asarray(y, dtype=float)
    lhs = math.prod(1.0 + W[i, j] * x[i] * y[j] for i in range(m) for j in range(n))
    rhs = 0.0
    pat = Pattern(W)
    for R in itertools.product(range(n + 1), repeat=m):
        for C in itertools.product(range(m + 1), repeat=n):
            if sum(R) != sum(C):
                continue
            cnt = enumerate_count(MarginPair(R, C), pat).count
            if cnt:
                rhs += float(cnt) * math.prod(x ** np.array(R)) * math.prod(y ** np.array(C))
    return abs(lhs - rhs) / abs(lhs)
