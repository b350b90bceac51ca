"""Convex dual of the counting problem and the maximum-entropy matrix.

For margins (R, C) and weights W the dual objective is

    G(s, t) = -sum_i r_i s_i - sum_j c_j t_j + sum_ij ln(1 + w_ij exp(s_i + t_j))

whose infimum is ln alpha(R, C; W).  At a minimiser the matrix
z_ij = w_ij e^{s_i+t_j} / (1 + w_ij e^{s_i+t_j}) has the prescribed margins
and maximises the entropy over the transportation polytope.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import entr, expit

from binmargin._kernels import dual_sweep
from binmargin.margins_core import (
    FREE,
    MarginError,
    MarginPair,
    Pattern,
    cell_status,
    check_sums,
    weights_of,
)


class EntryOutOfRange(MarginError):
    pass


class NonPositiveInput(MarginError):
    pass


@dataclass(frozen=True, eq=False)
class DualPoint:
    s: np.ndarray
    t: np.ndarray

    def __init__(self, s, t):
        s = np.array(s, dtype=float)
        t = np.array(t, dtype=float)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
            raise ValueError("dual coordinates must be finite")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)

    @classmethod
    def zeros(cls, m: int, n: int) -> "DualPoint":
        return cls(np.zeros(m), np.zeros(n))

    @property
    def x(self) -> np.ndarray:
        return np.exp(self.s)

    @property
    def y(self) -> np.ndarray:
        return np.exp(self.t)

    def shifted(self, c: float) -> "DualPoint":
        """The gauge-equivalent point (s + c, t - c)."""
        return DualPoint(self.s + c, self.t - c)

    def gauge_fixed(self) -> "DualPoint":
        return self.shifted(-self.s.mean()) if self.s.size else self

    def max_abs(self) -> float:
        return float(max(np.abs(self.s).max(initial=0.0), np.abs(self.t).max(initial=0.0)))

    def to_json(self) -> dict:
        return {"s": self.s.tolist(), "t": self.t.tolist()}


@dataclass(frozen=True)
class SolverConfig:
    tol: float | None = None  # default 1e-9 * N
    max_sweeps: int = 10_000
    dual_cap: float = 40.0

    def tolerance(self, N: int) -> float:
        return self.tol if self.tol is not None else 1e-9 * N


@dataclass(frozen=True, eq=False)
class MaxEntropyResult:
    dual: DualPoint
    Z: np.ndarray = field(repr=False)
    entropy: float
    log_alpha: float
    grad_inf_norm: float
    attained: bool
    iterations: int
    converged: bool
    fixed_cells: int = 0

    def to_json(self) -> dict:
        return {
            "Z": self.Z.tolist(),
            "log_alpha": self.log_alpha,
            "entropy": self.entropy,
            "attained": self.attained,
            "converged": self.converged,
            "grad_inf_norm": self.grad_inf_norm,
            "iterations": self.iterations,
            "fixed_cells": self.fixed_cells,
            "dual": self.dual.to_json(),
        }


def _logits(dual: DualPoint, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    support = W > 0
    logw = np.full(W.shape, -np.inf)
    logw[support] = np.log(W[support])
    return dual.s[:, None] + dual.t[None, :] + logw, support


def _check_dims(dual: DualPoint, margins: MarginPair) -> None:
    if dual.s.shape != (margins.m,) or dual.t.shape != (margins.n,):
        raise MarginError("dual point dimensions do not match the margins")


def objective(dual: DualPoint, margins: MarginPair, pattern: Pattern | None = None) -> float:
    """G(s, t; W); cells with w_ij = 0 contribute nothing."""
    W = weights_of(margins, pattern)
    _check_dims(dual, margins)
    u, support = _logits(dual, W)
    r = np.asarray(margins.rows, dtype=float)
    c = np.asarray(margins.cols, dtype=float)
    # logaddexp(0, u) = ln(1 + e^u), stable for large u
    return float(-r @ dual.s - c @ dual.t + np.logaddexp(0.0, u[support]).sum())


def expected_table(dual: DualPoint, W: np.ndarray) -> np.ndarray:
    u, support = _logits(dual, W)
    return np.where(support, expit(np.where(support, u, 0.0)), 0.0)


def gradient(
    dual: DualPoint, margins: MarginPair, pattern: Pattern | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """(dG/ds, dG/dt): line sums of the logistic matrix minus the margins."""
    W = weights_of(margins, pattern)
    _check_dims(dual, margins)
    Z = expected_table(dual, W)
    return Z.sum(axis=1) - np.asarray(margins.rows), Z.sum(axis=0) - np.asarray(margins.cols)


def entropy(X) -> float:
    """Sum of binary entropies of the entries, in nats; H(0) = H(1) = 0."""
    X = np.asarray(X, dtype=float)
    if np.any(X < 0) or np.any(X > 1) or not np.all(np.isfinite(X)):
        raise EntryOutOfRange("entropy needs entries in [0, 1]")
    return float(np.sum(entr(X) + entr(1.0 - X)))


def primal_objective(x, y, margins: MarginPair, pattern: Pattern | None = None) -> float:
    """ln F(x, y; W) evaluated in log space."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonPositiveInput("F is defined for positive x and y only")
    return objective(DualPoint(np.log(x), np.log(y)), margins, pattern)


def _components(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    m, n = mask.shape
    ii, jj = np.nonzero(mask)
    graph = csr_matrix((np.ones(len(ii)), (ii, m + jj)), shape=(m + n, m + n))
    ncomp, labels = connected_components(graph, directed=False)
    row_comp = labels[:m].astype(np.int64)
    col_comp = labels[m:].astype(np.int64)
    row_comp[~mask.any(axis=1)] = -1
    col_comp[~mask.any(axis=0)] = -1
    return row_comp, col_comp, ncomp


def _face_direction(status: np.ndarray, support: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """A direction (a, b) with a_i + b_j = 0 on free cells, >= 1 on cells fixed
    at one and <= -1 on support cells fixed at zero.

    Moving the duals along it drives the fixed cells to their values
    without touching the free ones, so G approaches its infimum.
    """
    m, n = status.shape
    A_eq, A_ub, b_ub = [], [], []
    for i, j in zip(*np.nonzero(support)):
        row = np.zeros(m + n)
        row[i] = row[m + j] = 1.0
        if status[i, j] == FREE:
            A_eq.append(row)
        elif status[i, j] == 1:
            A_ub.append(-row)
            b_ub.append(-1.0)
        else:
            A_ub.append(row)
            b_ub.append(-1.0)
    res = linprog(
        np.zeros(m + n),
        A_ub=np.array(A_ub) if A_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(A_eq) if A_eq else None,
        b_eq=np.zeros(len(A_eq)) if A_eq else None,
        bounds=[(None, None)] * (m + n),
        method="highs",
    )
    if not res.success:
        return None
    return res.x[:m], res.x[m:]


def solve(
    margins: MarginPair,
    pattern: Pattern | None = None,
    config: SolverConfig | None = None,
    callback: Callable[[int, DualPoint], None] | None = None,
    start: DualPoint | None = None,
) -> MaxEntropyResult:
    """Minimise G by alternating exact line minimisation over s and t.

    Cells that are constant across all tables are detected first; the sweeps
    run on the remaining free cells, where the minimum is attained.  When
    constant cells exist the infimum is not attained: the reported dual is
    pushed along a face direction until those cells sit within
    e^{-dual_cap} of their values, and ``attained`` is False.
    """
    config = config or SolverConfig()
    W = weights_of(margins, pattern)
    check_sums(margins)
    m, n = margins.m, margins.n
    status = cell_status(margins, pattern)
    support = W > 0
    free = status == FREE
    ones = status == 1

    r = np.asarray(margins.rows, dtype=float) - ones.sum(axis=1)
    c = np.asarray(margins.cols, dtype=float) - ones.sum(axis=0)
    r[~free.any(axis=1)] = 0.0
    c[~free.any(axis=0)] = 0.0
    logw = np.zeros((m, n))
    logw[support] = np.log(W[support])
    row_comp, col_comp, ncomp = _components(free)

    if start is None:
        s, t = np.zeros(m), np.zeros(n)
    else:
        _check_dims(start, margins)
        s, t = start.s.copy(), start.t.copy()
    tol = config.tolerance(margins.N)
    sweeps = 0
    grad = 0.0
    if free.any():
        for sweeps in range(1, config.max_sweeps + 1):
            grad = dual_sweep(logw, free, r, c, s, t, row_comp, col_comp, ncomp)
            if callback is not None:
                callback(sweeps, DualPoint(s, t))
            if grad <= tol:
                break
    converged = grad <= tol

    Z = np.where(free, expit(s[:, None] + t[None, :] + logw), 0.0)
    Z[ones] = 1.0
    dual = DualPoint(s, t)
    fixed_support = int(np.sum(support & ~free))
    if fixed_support:
        direction = _face_direction(status, support)
        if direction is not None:
            a, b = direction
            g = a[:, None] + b[None, :]
            u = s[:, None] + t[None, :] + logw
            fixed = support & ~free
            need = np.where(ones, config.dual_cap - u, config.dual_cap + u)[fixed] / np.abs(g[fixed])
            lam = max(0.0, float(need.max()))
            dual = DualPoint(s + lam * a, t + lam * b)
    dual = dual.gauge_fixed()

    gr, gc = gradient(dual, margins, pattern)
    grad_inf = float(max(np.abs(gr).max(initial=0.0), np.abs(gc).max(initial=0.0)))
    return MaxEntropyResult(
        dual=dual,
        Z=Z,
        entropy=entropy(Z),
        log_alpha=objective(dual, margins, pattern),
        grad_inf_norm=grad_inf,
        attained=fixed_support == 0 and dual.max_abs() <= config.dual_cap,
        iterations=sweeps,
        converged=converged,
        fixed_cells=fixed_support,
    )


def weighted_entropy(Z: np.ndarray, W: np.ndarray) -> float:
    """H(Z) + sum z_ij ln w_ij: the value ln alpha takes at the optimum for general W."""
    support = W > 0
    return entropy(Z) + float(np.sum(Z[support] * np.log(W[support])))


def replicate_dual(dual: DualPoint, k: int) -> DualPoint:
    """Each coordinate repeated k times, matching cloned margins."""
    return DualPoint(np.repeat(dual.s, k), np.repeat(dual.t, k))
