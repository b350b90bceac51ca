"""Rejection sampling from the Bernoulli matrix with means Z.

A matrix X with independent entries, P(x_ij = 1) = z_ij, puts the same mass
on every table in Sigma(R, C) when Z is the maximum entropy matrix, so the
draws that land in Sigma are exactly uniform (proportional to the weight
for non-binary W).  The hit rate |Sigma| / alpha also estimates the count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np
from scipy.stats import binomtest, chisquare

from binmargin.bounds import clone_margins
from binmargin.entropy_solver import SolverConfig, solve, weighted_entropy
from binmargin.exact_oracle import InstanceTooLarge, count_tables, enumerate_tables
from binmargin.margins_core import MarginPair, Pattern, SubsetIndex, sigma_S, weights_of


class BudgetExhausted(RuntimeError):
    """Raised with the partial run attached when too few draws were accepted."""

    def __init__(self, message: str, run: "SampleRun"):
        super().__init__(message)
        self.run = run


class HypothesisViolated(ValueError):
    pass


class ParamOutOfRange(ValueError):
    pass


DEFAULT_BATCH = 65_536


def _generator(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def bernoulli_draw(Z, rng: np.random.Generator) -> np.ndarray:
    """One matrix with independent entries, P(x_ij = 1) = z_ij; cells in row-major order."""
    Z = np.asarray(Z, dtype=float)
    return (rng.random(Z.shape) < Z).astype(np.int8)


@dataclass(frozen=True, eq=False)
class SampleRun:
    seed: int
    draws: int
    accepted: int
    tables: list = field(repr=False)
    log_alpha: float
    workers: int = 1

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.draws if self.draws else math.nan

    @property
    def log_count_estimate(self) -> float | None:
        """ln(accepted / draws) + ln alpha; undefined without accepts."""
        if self.accepted == 0:
            return None
        return math.log(self.accepted / self.draws) + self.log_alpha

    @property
    def log_std_error(self) -> float | None:
        """Delta-method standard error of the log estimate: sqrt((1 - p) / accepted)."""
        if self.accepted == 0:
            return None
        p = self.acceptance_rate
        return math.sqrt((1.0 - p) / self.accepted)

    @property
    def acceptance_rate_ci(self) -> tuple[float, float]:
        if self.draws == 0:
            return (0.0, 1.0)
        ci = binomtest(self.accepted, self.draws).proportion_ci(confidence_level=0.95)
        return (float(ci.low), float(ci.high))

    def log_count_ci(self) -> tuple[float, float] | None:
        lo, hi = self.acceptance_rate_ci
        if hi <= 0:
            return None
        return (math.log(lo) + self.log_alpha if lo > 0 else -math.inf, math.log(hi) + self.log_alpha)

    def to_json(self, with_tables: bool = False) -> dict:
        out = {
            "seed": self.seed,
            "draws": self.draws,
            "accepted": self.accepted,
            "workers": self.workers,
            "acceptance_rate": self.acceptance_rate,
            "acceptance_rate_ci": list(self.acceptance_rate_ci),
            "log_alpha": self.log_alpha,
            "log_count_estimate": self.log_count_estimate,
            "log_std_error": self.log_std_error,
        }
        if with_tables:
            out["tables"] = [t.tolist() for t in self.tables]
        return out


def _stream(Z, r, c, support, target, budget, keep, rng, batch):
    """Draw until ``target`` accepts or ``budget`` draws; return (draws, accepted, tables)."""
    draws = accepted = 0
    tables: list[np.ndarray] = []
    while draws < budget and (target is None or accepted < target):
        size = min(batch, budget - draws)
        X = rng.random((size,) + Z.shape) < Z
        ok = np.all(X.sum(axis=2) == r, axis=1) & np.all(X.sum(axis=1) == c, axis=1)
        ok &= ~np.any(X & ~support, axis=(1, 2))
        hits = np.flatnonzero(ok)
        if target is not None and accepted + hits.size >= target:
            hits = hits[: target - accepted]
            used = int(hits[-1]) + 1
        else:
            used = size
        for h in hits:
            if len(tables) < keep:
                tables.append(X[h].astype(np.int8))
        draws += used
        accepted += hits.size
    return draws, accepted, tables


def rejection_sample(
    margins: MarginPair,
    pattern: Pattern | None = None,
    Z: np.ndarray | None = None,
    k: int | None = None,
    budget: int = 10_000_000,
    seed: int = 0,
    workers: int = 1,
    keep: int | None = None,
    batch: int = DEFAULT_BATCH,
) -> SampleRun:
    """Draw Bernoulli(Z) matrices and keep those in Sigma(R, C; W).

    Stops after ``k`` accepts (all of ``budget`` when ``k`` is None).  With
    several workers the seed is split into independent streams, each with
    its share of the budget and of ``k``; tables are concatenated in worker
    order, so a fixed worker count reproduces the run exactly.  At most
    ``keep`` tables are stored (default ``k``).
    """
    W = weights_of(margins, pattern)
    if Z is None:
        Z = solve(margins, pattern).Z
    Z = np.clip(np.asarray(Z, dtype=float), 0.0, 1.0)
    log_alpha = weighted_entropy(Z, W)
    r = np.asarray(margins.rows)
    c = np.asarray(margins.cols)
    support = W > 0
    keep = (k if k is not None else 0) if keep is None else keep

    if workers <= 1:
        draws, accepted, tables = _stream(Z, r, c, support, k, budget, keep, _generator(seed), batch)
    else:
        children = np.random.SeedSequence(seed).spawn(workers)

        def share(total, w):
            return total // workers + (1 if w < total % workers else 0)

        def job(w):
            tgt = None if k is None else share(k, w)
            return _stream(Z, r, c, support, tgt, share(budget, w), share(keep, w), _generator(children[w]), batch)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, range(workers)))
        draws = sum(p[0] for p in parts)
        accepted = sum(p[1] for p in parts)
        tables = [t for p in parts for t in p[2]]

    run = SampleRun(seed, draws, accepted, tables, log_alpha, max(1, workers))
    if k is not None and accepted < k:
        raise BudgetExhausted(f"only {accepted} of {k} tables accepted in {draws} draws", run)
    return run


def write_tables_csv(tables: Sequence[np.ndarray], fh: IO[str]) -> None:
    """One record per table: index, m, n, then the entries in row-major order."""
    w = csv.writer(fh)
    for idx, t in enumerate(tables):
        t = np.asarray(t)
        w.writerow([idx, t.shape[0], t.shape[1], *t.ravel().tolist()])


def log_mass(Z, D) -> float:
    """ln P(X = D) for the Bernoulli matrix with means Z."""
    Z = np.asarray(Z, dtype=float)
    D = np.asarray(D).astype(bool)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.where(D, np.log(Z), np.log1p(-Z))))


def mass_function_check(Z, tables, W=None) -> float:
    """max over D of |ln P(X = D) - ln w(D) + ln alpha|; for 0-1 weights ln alpha = H(Z)."""
    Z = np.asarray(Z, dtype=float)
    W = np.ones_like(Z) if W is None else np.asarray(W, dtype=float)
    log_alpha = weighted_entropy(Z, W)
    worst = 0.0
    for D in tables:
        mask = np.asarray(D).astype(bool)
        log_w = float(np.sum(np.log(W[mask])))
        worst = max(worst, abs(log_mass(Z, D) - log_w + log_alpha))
    return worst


# -- concentration ------------------------------------------------------------------


def tail_bound(a: float, epsilon: float) -> tuple[float, float]:
    """Chernoff bounds for a sum Y of independent Bernoullis with mean a:
    P(Y >= (1+eps) a) <= exp(-eps^2 a / 3) and P(Y <= (1-eps) a) <= exp(-eps^2 a / 2)."""
    if not (a >= 0) or not (0 <= epsilon <= 1):
        raise ParamOutOfRange("tail_bound needs a >= 0 and 0 <= epsilon <= 1")
    return math.exp(-epsilon**2 * a / 3), math.exp(-epsilon**2 * a / 2)


@dataclass(frozen=True)
class TailValidation:
    a: float
    epsilon: float
    upper_freq: float
    lower_freq: float
    upper_bound: float
    lower_bound: float

    @property
    def holds(self) -> bool:
        return self.upper_freq <= self.upper_bound and self.lower_freq <= self.lower_bound


def validate_tail_bound(probs, epsilon: float, trials: int = 100_000, seed: int = 0) -> TailValidation:
    """Monte Carlo tail frequencies of a sum of independent Bernoulli(probs) against tail_bound."""
    probs = np.asarray(probs, dtype=float)
    rng = _generator(seed)
    a = float(probs.sum())
    Y = np.zeros(trials)
    step = max(1, 10_000_000 // max(1, probs.size))
    for lo in range(0, trials, step):
        hi = min(trials, lo + step)
        Y[lo:hi] = (rng.random((hi - lo, probs.size)) < probs).sum(axis=1)
    up, low = tail_bound(a, epsilon)
    return TailValidation(
        a,
        epsilon,
        float(np.mean(Y >= (1 + epsilon) * a)),
        float(np.mean(Y <= (1 - epsilon) * a)),
        up,
        low,
    )


@dataclass(frozen=True)
class ConcentrationParams:
    delta: float
    kappa: float
    S: SubsetIndex
    epsilon_override: float | None = None  # decouples eps from delta (experimental)

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ParamOutOfRange("delta must lie in (0, 1)")
        if not self.kappa > 0:
            raise ParamOutOfRange("kappa must be positive")

    def epsilon(self, m: int, n: int) -> float:
        if self.epsilon_override is not None:
            return self.epsilon_override
        return self.delta * math.log(n) / math.sqrt(m)


def exact_distribution(margins: MarginPair, pattern: Pattern | None, S: SubsetIndex, limit: int = 200_000):
    """{sigma_S(D): probability} under the uniform (weight-proportional) measure on Sigma."""
    W = weights_of(margins, pattern)
    mass: dict[float, float] = {}
    total = 0.0
    seen = 0
    for D in enumerate_tables(margins, pattern, limit=limit + 1):
        seen += 1
        if seen > limit:
            raise InstanceTooLarge(f"more than {limit} tables to enumerate")
        w = float(np.prod(W[D.astype(bool)]))
        v = float(sigma_S(D, S))
        mass[v] = mass.get(v, 0.0) + w
        total += w
    return {v: p / total for v, p in sorted(mass.items())}


def histogram_pvalue(values: Sequence[float], dist: dict[float, float], min_expected: float = 5.0) -> float:
    """Chi-square p-value of observed values against a discrete distribution.

    Adjacent support points are pooled until every bin expects at least
    ``min_expected`` counts; a value outside the support gives p = 0.
    """
    values = np.asarray(values, dtype=float)
    support = np.array(sorted(dist))
    if not np.all(np.isin(values, support)):
        return 0.0
    if support.size <= 1:
        return 1.0
    n = values.size
    probs = np.array([dist[v] for v in support])
    counts = np.array([np.sum(values == v) for v in support], dtype=float)
    obs, exp_ = [], []
    acc_o = acc_e = 0.0
    for o, p in zip(counts, probs):
        acc_o += o
        acc_e += p * n
        if acc_e >= min_expected:
            obs.append(acc_o)
            exp_.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if obs:
            obs[-1] += acc_o
            exp_[-1] += acc_e
        else:
            obs.append(acc_o)
            exp_.append(acc_e)
    if len(obs) <= 1:
        return 1.0
    return float(chisquare(obs, exp_).pvalue)


@dataclass(frozen=True)
class ConcentrationReport:
    epsilon: float
    sigma_Z: float
    interval: tuple[float, float]
    samples: int
    in_interval_fraction: float
    asymptotic_floor: float
    chernoff_upper: float
    chernoff_lower: float
    bernoulli_upper_freq: float
    bernoulli_lower_freq: float
    chernoff_holds: bool
    exact_in_interval: float | None
    chisq_pvalue: float | None
    histogram: dict = field(default_factory=dict)
    exact_distribution: dict | None = None

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["interval"] = list(self.interval)
        out["histogram"] = {repr(k): v for k, v in self.histogram.items()}
        if self.exact_distribution is not None:
            out["exact_distribution"] = {repr(k): v for k, v in self.exact_distribution.items()}
        return out


def concentration_experiment(
    margins: MarginPair,
    pattern: Pattern | None,
    params: ConcentrationParams,
    samples: int = 1000,
    seed: int = 0,
    budget: int = 100_000_000,
    exact: bool | None = None,
    config: SolverConfig | None = None,
    workers: int = 1,
) -> ConcentrationReport:
    """How often sigma_S of a uniform table falls within (1 +- eps) sigma_S(Z).

    The uniform tables come from the rejection sampler.  For enumerable
    instances the sampled histogram of sigma_S is tested against the exact
    distribution.  Separately, unconditioned Bernoulli(Z) matrices are drawn
    and their tail frequencies compared with the Chernoff bounds.
    """
    m, n = margins.m, margins.n
    params.S.mask(m, n)
    eps = params.epsilon(m, n)
    if eps > 1:
        raise HypothesisViolated(f"epsilon = {eps:.6g} > 1")
    if eps < 0:
        raise HypothesisViolated(f"epsilon = {eps:.6g} < 0")
    res = solve(margins, pattern, config)
    Z = res.Z
    sZ = float(sigma_S(Z, params.S))
    if sZ < params.delta * m * n:
        raise HypothesisViolated(f"sigma_S(Z) = {sZ:.6g} < delta*m*n = {params.delta * m * n:.6g}")
    lo, hi = (1 - eps) * sZ, (1 + eps) * sZ
    tol = 1e-9 * max(1.0, sZ)

    run = rejection_sample(margins, pattern, Z, k=samples, budget=budget, seed=seed, workers=workers)
    vals = np.array([float(sigma_S(D, params.S)) for D in run.tables], dtype=float)
    inside = float(np.mean((vals >= lo - tol) & (vals <= hi + tol))) if vals.size else math.nan
    hist: dict[float, int] = {}
    for v in vals.tolist():
        hist[v] = hist.get(v, 0) + 1

    # unconditioned Bernoulli matrices: sigma_S is a sum of independent Bernoullis
    mask = params.S.mask(m, n)
    probs = Z[mask]
    tv = validate_tail_bound(probs, eps, trials=samples, seed=seed + 1) if probs.size else None
    up, low = tail_bound(sZ, eps)
    slack_u = 3 * math.sqrt(up * (1 - up) / samples)
    slack_l = 3 * math.sqrt(low * (1 - low) / samples)
    holds = tv is None or (tv.upper_freq <= up + slack_u and tv.lower_freq <= low + slack_l)

    if exact is None:
        exact = m * n <= 25 and int(count_tables(margins, pattern).count) <= 200_000
    dist = exact_distribution(margins, pattern, params.S) if exact else None
    exact_in = None
    pval = None
    if dist is not None:
        exact_in = float(sum(p for v, p in dist.items() if lo - tol <= v <= hi + tol))
        pval = histogram_pvalue(vals, dist)
    return ConcentrationReport(
        epsilon=eps,
        sigma_Z=sZ,
        interval=(lo, hi),
        samples=int(vals.size),
        in_interval_fraction=inside,
        asymptotic_floor=1.0 - 2.0 * n ** (-params.kappa * n),
        chernoff_upper=up,
        chernoff_lower=low,
        bernoulli_upper_freq=tv.upper_freq if tv else 0.0,
        bernoulli_lower_freq=tv.lower_freq if tv else 0.0,
        chernoff_holds=holds,
        exact_in_interval=exact_in,
        chisq_pvalue=pval,
        histogram=dict(sorted(hist.items())),
        exact_distribution=dist,
    )


# -- entry probe ---------------------------------------------------------------------


@dataclass(frozen=True)
class EntryProbe:
    k: int
    cell: tuple[int, int]
    empirical_mean: float | None
    exact_frequency: float | None
    z: float
    samples: int

    def to_json(self) -> dict:
        return dict(self.__dict__, cell=list(self.cell))


def entry_distribution_probe(
    margins: MarginPair,
    k_max: int,
    cell: tuple[int, int],
    samples: int = 2000,
    seed: int = 0,
    budget: int = 50_000_000,
    exact_max_cells: int = 36,
) -> list[EntryProbe]:
    """Frequency of a one at ``cell`` (its first copy in each clone) next to z at that cell.

    Diagnostic only.  The exact frequency comes from counting the clone
    with that cell forbidden, when the clone is small enough.
    """
    i, j = cell
    if not (0 <= i < margins.m and 0 <= j < margins.n):
        raise IndexError(f"cell {cell} outside a {margins.m}x{margins.n} table")
    out = []
    for k in range(1, k_max + 1):
        ck = clone_margins(margins, k)
        res = solve(ck)
        ci, cj = i * k, j * k
        exact = None
        if ck.m * ck.n <= exact_max_cells:
            total = count_tables(ck).count
            W = np.ones((ck.m, ck.n))
            W[ci, cj] = 0.0
            zero = count_tables(ck, Pattern(W)).count
            exact = float(1 - zero / total) if total else None
        emp = None
        drawn = 0
        if samples:
            run = rejection_sample(ck, None, res.Z, k=samples, budget=budget, seed=seed + k)
            emp = float(np.mean([t[ci, cj] for t in run.tables]))
            drawn = len(run.tables)
        out.append(EntryProbe(k, (ci, cj), emp, exact, float(res.Z[ci, cj]), drawn))
    return out
