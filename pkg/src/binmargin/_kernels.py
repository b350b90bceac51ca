"""numba kernels for the hot loops: dual coordinate sweeps and Gray-code Ryser."""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _logistic(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _solve_line(a, mask, target, start):
    """Root of sum_k logistic(u + a_k) = target over masked k.

    The left side is strictly increasing in u; the root lies between
    logit(target/d) - max(a) and logit(target/d) - min(a).  Newton steps
    that leave the bracket are replaced by bisection.
    """
    d = 0
    amin = np.inf
    amax = -np.inf
    for k in range(a.shape[0]):
        if mask[k]:
            d += 1
            if a[k] < amin:
                amin = a[k]
            if a[k] > amax:
                amax = a[k]
    q = target / d
    base = math.log(q) - math.log1p(-q)
    lo = base - amax
    hi = base - amin
    u = start
    if u < lo or u > hi:
        u = 0.5 * (lo + hi)
    ftol = 1e-15 * max(1.0, target)
    for _ in range(200):
        f = -target
        df = 0.0
        for k in range(a.shape[0]):
            if mask[k]:
                z = _logistic(u + a[k])
                f += z
                df += z * (1.0 - z)
        if abs(f) <= ftol:
            break
        if f > 0.0:
            hi = u
        else:
            lo = u
        if hi - lo <= 1e-15 * (1.0 + abs(u)):
            break
        step = u - f / df if df > 0.0 else 0.5 * (lo + hi)
        if step <= lo or step >= hi:
            step = 0.5 * (lo + hi)
        u = step
    return u


@njit(cache=True)
def dual_sweep(logw, mask, r, c, s, t, row_comp, col_comp, ncomp):
    """One block sweep: exact minimisation over all s, then over all t.

    Re-fixes the gauge (sum of s is zero on each connected component)
    and returns the sup-norm of the gradient at the new point.
    """
    m, n = logw.shape
    a = np.empty(n)
    for i in range(m):
        if r[i] <= 0.0:
            continue
        for j in range(n):
            a[j] = t[j] + logw[i, j]
        s[i] = _solve_line(a, mask[i], r[i], s[i])
    b = np.empty(m)
    for j in range(n):
        if c[j] <= 0.0:
            continue
        for i in range(m):
            b[i] = s[i] + logw[i, j]
        t[j] = _solve_line(b, mask[:, j], c[j], t[j])

    shift = np.zeros(ncomp)
    count = np.zeros(ncomp)
    for i in range(m):
        if row_comp[i] >= 0:
            shift[row_comp[i]] += s[i]
            count[row_comp[i]] += 1.0
    for k in range(ncomp):
        if count[k] > 0:
            shift[k] /= count[k]
    for i in range(m):
        if row_comp[i] >= 0:
            s[i] -= shift[row_comp[i]]
    for j in range(n):
        if col_comp[j] >= 0:
            t[j] += shift[col_comp[j]]

    gmax = 0.0
    colsum = np.zeros(n)
    for i in range(m):
        rs = 0.0
        for j in range(n):
            if mask[i, j]:
                z = _logistic(s[i] + t[j] + logw[i, j])
                rs += z
                colsum[j] += z
        g = abs(rs - r[i])
        if g > gmax:
            gmax = g
    for j in range(n):
        g = abs(colsum[j] - c[j])
        if g > gmax:
            gmax = g
    return gmax


@njit(cache=True)
def _mulmod(a, b, p):
    return (a * b) % p


@njit(cache=True)
def ryser_mod(A, primes):
    """Ryser's formula modulo each prime, columns visited in Gray-code order.

    per A = (-1)^N sum_S (-1)^|S| prod_i sum_{j in S} a_ij
    """
    N = A.shape[0]
    P = primes.shape[0]
    rowsum = np.zeros(N, dtype=np.int64)
    acc = np.zeros(P, dtype=np.int64)
    in_set = np.zeros(N, dtype=np.bool_)
    size = 0
    for k in range(1, 1 << N):
        j = 0
        while not (k >> j) & 1:
            j += 1
        if in_set[j]:
            in_set[j] = False
            size -= 1
            for i in range(N):
                rowsum[i] -= A[i, j]
        else:
            in_set[j] = True
            size += 1
            for i in range(N):
                rowsum[i] += A[i, j]
        negative = (N - size) % 2 == 1
        for q in range(P):
            p = primes[q]
            prod = 1
            for i in range(N):
                prod = _mulmod(prod, rowsum[i] % p, p)
                if prod == 0:
                    break
            if negative:
                acc[q] = (acc[q] - prod) % p
            else:
                acc[q] = (acc[q] + prod) % p
    return acc


@njit(cache=True)
def ryser_float(A):
    """Gray-code Ryser in double precision with Neumaier-compensated accumulation."""
    N = A.shape[0]
    rowsum = np.zeros(N)
    in_set = np.zeros(N, dtype=np.bool_)
    size = 0
    total = 0.0
    comp = 0.0
    for k in range(1, 1 << N):
        j = 0
        while not (k >> j) & 1:
            j += 1
        if in_set[j]:
            in_set[j] = False
            size -= 1
            for i in range(N):
                rowsum[i] -= A[i, j]
        else:
            in_set[j] = True
            size += 1
            for i in range(N):
                rowsum[i] += A[i, j]
        prod = 1.0
        for i in range(N):
            prod *= rowsum[i]
        if (N - size) % 2 == 1:
            prod = -prod
        tmp = total + prod
        if abs(total) >= abs(prod):
            comp += (total - tmp) + prod
        else:
            comp += (prod - tmp) + total
        total = tmp
    return total + comp
