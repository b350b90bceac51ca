"""Log-domain counting bounds, the independence estimate and margin cloning."""

from __future__ import annotations

import math
import os
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import entr

from binmargin.entropy_solver import (
    MaxEntropyResult,
    SolverConfig,
    gradient,
    objective,
    replicate_dual,
    solve,
)
from binmargin.exact_oracle import DEFAULT_NODE_BUDGET, InstanceTooLarge, enumerate_count
from binmargin.margins_core import MarginPair, Pattern, validate

# -- ln k! ----------------------------------------------------------------------

FACTORIAL_CACHE_LIMIT = 10**6
_lock = threading.Lock()
_table = np.zeros(1)  # _table[k] = ln k!


def _spill_path() -> Path | None:
    d = os.environ.get("BINMARGIN_CACHE_DIR")
    return Path(d) / "log_factorial.npy" if d else None


def _grow(k: int) -> None:
    global _table
    with _lock:
        if k < _table.size:
            return
        size = min(FACTORIAL_CACHE_LIMIT, max(k + 1, 2 * _table.size, 1024))
        path = _spill_path()
        if path is not None and path.exists():
            stored = np.load(path)
            if stored.size >= size:
                _table = stored
                return
        _table = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, size, dtype=float)))))
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, _table)


def log_factorial(k: int) -> float:
    """ln k! by summing logarithms (memoised up to 10**6, lgamma beyond)."""
    if k < 0:
        raise ValueError("factorial of a negative number")
    if k >= FACTORIAL_CACHE_LIMIT:
        return math.lgamma(k + 1)
    if k >= _table.size:
        _grow(k)
    return float(_table[k])


def log_binomial(a: int, b: int) -> float:
    if b < 0 or b > a:
        return -math.inf
    return log_factorial(a) - log_factorial(b) - log_factorial(a - b)


def _xlogx(k: int) -> float:
    return k * math.log(k) if k > 0 else 0.0


# -- the bounds ---------------------------------------------------------------------


def stirling_correction(margins: MarginPair) -> float:
    """ln of (mn)!/(mn)^{mn} prod (n-r_i)^{n-r_i}/(n-r_i)! prod c_j^{c_j}/c_j!  (always <= 0)."""
    m, n = margins.m, margins.n
    mn = m * n
    out = log_factorial(mn) - _xlogx(mn)
    for r in margins.rows:
        out += _xlogx(n - r) - log_factorial(n - r)
    for c in margins.cols:
        out += _xlogx(c) - log_factorial(c)
    return out


def independence_estimate(margins: MarginPair) -> float:
    """ln I(R, C) = -ln C(mn, N) + sum ln C(n, r_i) + sum ln C(m, c_j)."""
    m, n = margins.m, margins.n
    out = -log_binomial(m * n, margins.N)
    out += sum(log_binomial(n, r) for r in margins.rows)
    out += sum(log_binomial(m, c) for c in margins.cols)
    return out


@dataclass(frozen=True)
class BoundsReport:
    log_upper: float
    log_lower: float
    log_correction: float
    log_independence: float | None = None
    log_exact: float | None = None

    def to_json(self) -> dict:
        return {
            "log_upper": self.log_upper,
            "log_lower": self.log_lower,
            "log_correction": self.log_correction,
            "log_independence": self.log_independence,
            "log_exact": self.log_exact,
        }


def bounds_report(
    margins: MarginPair,
    pattern: Pattern | None = None,
    solver_result: MaxEntropyResult | None = None,
    log_exact: float | None = None,
) -> BoundsReport:
    """Upper bound alpha and the lower bound alpha times the Stirling product.

    Lines forced to all zeros or all ones are pinned first; the Stirling
    product is taken over the reduced instance, whose margins are strictly
    inside (0, n) and (0, m).  Pinning leaves alpha unchanged up to the
    weight of the forced cells, so log_upper is the solver value as is.
    """
    if solver_result is None:
        solver_result = solve(margins, pattern)
    upper = solver_result.log_alpha
    corr = stirling_correction(validate(margins, pattern).reduced)
    indep = independence_estimate(margins) if pattern is None else None
    return BoundsReport(upper, upper + corr, corr, indep, log_exact)


def fit_gamma(instances) -> float:
    """Smallest gamma with correction >= -gamma (m+n) ln(mn) over the given margins."""
    worst = 0.0
    for mp in instances:
        mn = mp.m * mp.n
        if mn < 2:
            continue
        worst = max(worst, -stirling_correction(mp) / ((mp.m + mp.n) * math.log(mn)))
    return worst


# -- cloning ----------------------------------------------------------------------

MAX_CLONE_CELLS = 10**6


def clone_margins(margins: MarginPair, k: int, max_cells: int = MAX_CLONE_CELLS) -> MarginPair:
    """(R_k, C_k): every margin multiplied by k and repeated k times in place."""
    if k < 1:
        raise ValueError("clone factor must be a positive integer")
    if margins.m * margins.n * k * k > max_cells:
        raise InstanceTooLarge(f"cloned instance would have more than {max_cells} cells")
    return MarginPair(
        [k * r for r in margins.rows for _ in range(k)],
        [k * c for c in margins.cols for _ in range(k)],
    )


@dataclass(frozen=True)
class CloneStep:
    k: int
    log_count_over_k2: float
    log_alpha: float
    log_alpha_clone: float
    log_alpha_replicated: float
    replicated_grad_inf: float
    count: int

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "count": str(self.count),
            "log_count_over_k2": self.log_count_over_k2,
            "log_alpha": self.log_alpha,
            "log_alpha_clone": self.log_alpha_clone,
            "log_alpha_replicated": self.log_alpha_replicated,
            "replicated_grad_inf": self.replicated_grad_inf,
        }


def cloning_limit_check(
    margins: MarginPair,
    k_max: int,
    config: SolverConfig | None = None,
    budget: int = DEFAULT_NODE_BUDGET,
    max_cells: int = 64,
) -> list[CloneStep]:
    """Exact ln|Sigma(R_k, C_k)|/k^2 for k = 1..k_max next to ln alpha(R, C).

    Each step also solves the clone directly and evaluates G and its
    gradient at the base optimum replicated k times, which should be a
    stationary point with value k^2 ln alpha.
    """
    base = solve(margins, None, config)
    out = []
    for k in range(1, k_max + 1):
        ck = clone_margins(margins, k, max_cells=max_cells)
        cnt = int(enumerate_count(ck, None, budget=budget).count)
        clone = solve(ck, None, config)
        rep = replicate_dual(base.dual, k)
        gr, gc = gradient(rep, ck)
        out.append(
            CloneStep(
                k=k,
                log_count_over_k2=math.log(cnt) / k**2 if cnt else -math.inf,
                log_alpha=base.log_alpha,
                log_alpha_clone=clone.log_alpha,
                log_alpha_replicated=objective(rep, ck),
                replicated_grad_inf=float(max(np.abs(gr).max(), np.abs(gc).max())),
                count=cnt,
            )
        )
    return out


# -- repulsion --------------------------------------------------------------------


def multivariate_entropy(p) -> float:
    """H(p_1, ..., p_k) = sum p ln(1/p) for a probability vector."""
    return float(np.sum(entr(np.asarray(p, dtype=float))))


def _binary_entropy(x: float) -> float:
    return float(entr(x) + entr(1.0 - x))


def independence_limit(margins: MarginPair) -> float:
    """lim (1/k^2) ln I(R_k, C_k) in the binary-entropy form."""
    m, n, N = margins.m, margins.n, margins.N
    return (
        -m * n * _binary_entropy(N / (m * n))
        + n * sum(_binary_entropy(r / n) for r in margins.rows)
        + m * sum(_binary_entropy(c / m) for c in margins.cols)
    )


def _scaled_entropy(weights, total: float) -> float:
    # total * H(weights / total); zero when the total is zero
    return total * multivariate_entropy(np.asarray(weights, dtype=float) / total) if total > 0 else 0.0


def _xlog(x: float) -> float:
    return x * math.log(x) if x > 0 else 0.0


def independence_limit_multivariate(margins: MarginPair) -> float:
    """The same limit written through the multivariate entropy of the margins."""
    m, n, N = margins.m, margins.n, margins.N
    rest = m * n - N
    R = np.asarray(margins.rows, dtype=float)
    C = np.asarray(margins.cols, dtype=float)
    return (
        _scaled_entropy(R, N)
        + _scaled_entropy(n - R, rest)
        + _scaled_entropy(C, N)
        + _scaled_entropy(m - C, rest)
        - _xlog(N)
        - _xlog(rest)
    )


def count_limit(Z: np.ndarray) -> float:
    """lim (1/k^2) ln |Sigma(R_k, C_k)| from the maximum entropy matrix."""
    Z = np.asarray(Z, dtype=float)
    N = float(Z.sum())
    rest = Z.size - N
    return _scaled_entropy(Z.ravel(), N) + _scaled_entropy(1.0 - Z.ravel(), rest) - _xlog(N) - _xlog(rest)


@dataclass(frozen=True)
class RepulsionGap:
    lim_log_I: float
    lim_log_count: float
    gap: float
    lim_log_I_binary_form: float

    def __iter__(self):
        return iter((self.lim_log_I, self.lim_log_count, self.gap))

    def to_json(self) -> dict:
        return {
            "lim_log_I": self.lim_log_I,
            "lim_log_count": self.lim_log_count,
            "gap": self.gap,
            "lim_log_I_binary_form": self.lim_log_I_binary_form,
        }


def repulsion_gap(margins: MarginPair, solver_result: MaxEntropyResult | None = None) -> RepulsionGap:
    """Limits of (1/k^2) ln I and (1/k^2) ln |Sigma| under cloning, and their gap (>= 0)."""
    if solver_result is None:
        solver_result = solve(margins)
    lim_I = independence_limit_multivariate(margins)
    lim_count = count_limit(solver_result.Z)
    return RepulsionGap(lim_I, lim_count, lim_I - lim_count, independence_limit(margins))
