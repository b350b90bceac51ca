"""Command-line interface: JSON on stdout, diagnostics on stderr.

Exit codes: 0 success, 1 infeasible, 2 usage error or violated hypothesis,
3 budget or size limit.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from binmargin import __version__
from binmargin.bounds import bounds_report, cloning_limit_check, repulsion_gap
from binmargin.entropy_solver import SolverConfig, solve
from binmargin.exact_oracle import (
    DEFAULT_NODE_BUDGET,
    InstanceTooLarge,
    SearchBudgetExceeded,
    count_tables,
)
from binmargin.margins_core import (
    Infeasible,
    MarginError,
    MarginPair,
    Pattern,
    SubsetIndex,
    interior_nonempty,
    pattern_feasible,
    validate,
)
from binmargin.sampler import (
    BudgetExhausted,
    ConcentrationParams,
    HypothesisViolated,
    ParamOutOfRange,
    concentration_experiment,
    entry_distribution_probe,
    rejection_sample,
    write_tables_csv,
)

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3


class UsageError(Exception):
    pass


# -- JSON with 17 significant digits ------------------------------------------------


def _encode(obj: Any) -> str:
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, Fraction):
        return _encode(float(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj: Any) -> str:
    return _encode(obj)


# -- instances ------------------------------------------------------------------------


class Instance:
    def __init__(self, doc: dict):
        if not isinstance(doc, dict) or "rows" not in doc or "cols" not in doc:
            raise UsageError('instance must be a JSON object with "rows" and "cols"')
        try:
            self.margins = MarginPair(doc["rows"], doc["cols"])
            self.pattern = Pattern(doc["weights"]) if doc.get("weights") is not None else None
        except (TypeError, ValueError) as exc:
            raise UsageError(f"malformed instance: {exc}") from None
        self.subset = SubsetIndex(doc["subset"]) if doc.get("subset") else None
        self.doc = {"rows": list(self.margins.rows), "cols": list(self.margins.cols)}
        if self.pattern is not None:
            self.doc["weights"] = self.pattern.W.tolist()
        if self.subset is not None:
            self.doc["subset"] = sorted([list(c) for c in self.subset.cells])

    @property
    def digest(self) -> str:
        return hashlib.sha256(dumps(self.doc).encode()).hexdigest()


def load_instance(path: str) -> Instance:
    try:
        if path == "-":
            doc = json.load(sys.stdin)
        else:
            with open(path) as fh:
                doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read instance {path}: {exc}") from None
    return Instance(doc)


def _envelope(inst: Instance, args, body: dict) -> dict:
    out = {"version": __version__, "command": args.command, "instance_digest": inst.digest}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    out["instance"] = inst.doc
    out.update(body)
    return out


def _config(args) -> SolverConfig:
    return SolverConfig(tol=args.tol, max_sweeps=args.max_sweeps, dual_cap=args.dual_cap)


# -- subcommands --------------------------------------------------------------------------


def run_feasible(inst: Instance, args) -> tuple[int, dict]:
    try:
        red = validate(inst.margins, inst.pattern)
    except Infeasible as exc:
        return EXIT_INFEASIBLE, {"feasible": False, "interior": False, "reason": str(exc)}
    if not pattern_feasible(inst.margins, inst.pattern):
        return EXIT_INFEASIBLE, {"feasible": False, "interior": False}
    return EXIT_OK, {
        "feasible": True,
        "interior": interior_nonempty(inst.margins, inst.pattern),
        "reduced": red.to_json(),
    }


def run_solve(inst: Instance, args) -> tuple[int, dict]:
    res = solve(inst.margins, inst.pattern, _config(args))
    return EXIT_OK, res.to_json()


def run_bounds(inst: Instance, args) -> tuple[int, dict]:
    res = solve(inst.margins, inst.pattern, _config(args))
    log_exact = None
    if args.exact:
        log_exact = count_tables(inst.margins, inst.pattern, budget=args.budget).log()
    return EXIT_OK, bounds_report(inst.margins, inst.pattern, res, log_exact).to_json()


def _count_json(cnt) -> dict:
    out = cnt.to_json()
    out["log_count"] = cnt.log()
    return out


def run_count(inst: Instance, args) -> tuple[int, dict]:
    margins, pattern = inst.margins, inst.pattern
    res = solve(margins, pattern, _config(args))
    body: dict = {}
    method = args.method
    budget = args.budget
    tried = []
    result = None
    order = ["enumerate", "permanent", "estimate"] if method == "auto" else [method]
    for meth in order:
        try:
            if meth == "enumerate":
                result = _count_json(count_tables(margins, pattern, "enumerate", budget=budget, workers=args.workers))
            elif meth == "permanent":
                result = _count_json(count_tables(margins, pattern, "permanent", max_terms=budget))
            else:
                result = _estimate(margins, pattern, res, args)
            break
        except (SearchBudgetExceeded, InstanceTooLarge) as exc:
            tried.append({"method": meth, "error": str(exc)})
    bounds = bounds_report(margins, pattern, res)
    body.update(result or {"count": None})
    body["tried"] = tried
    body.update(bounds.to_json())
    if result is None:
        print("no counting method fits the budget", file=sys.stderr)
        return EXIT_BUDGET, body
    if result.get("count") == "0":
        return EXIT_INFEASIBLE, body
    if result.get("method") == "estimate" and result.get("accepted") == 0:
        return EXIT_BUDGET, body
    return EXIT_OK, body


def _estimate(margins, pattern, res, args) -> dict:
    run = rejection_sample(margins, pattern, res.Z, k=None, budget=args.samples, seed=args.seed, workers=args.workers)
    ci = run.log_count_ci()
    return {
        "count": None,
        "method": "estimate",
        "log_count": run.log_count_estimate,
        "log_count_ci": list(ci) if ci else None,
        "draws": run.draws,
        "accepted": run.accepted,
        "log_std_error": run.log_std_error,
    }


def run_sample(inst: Instance, args) -> tuple[int, dict]:
    res = solve(inst.margins, inst.pattern, _config(args))
    code = EXIT_OK
    try:
        run = rejection_sample(
            inst.margins, inst.pattern, res.Z, k=args.samples, budget=args.budget, seed=args.seed, workers=args.workers
        )
    except BudgetExhausted as exc:
        print(str(exc), file=sys.stderr)
        run, code = exc.run, EXIT_BUDGET
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            write_tables_csv(run.tables, fh)
    return code, run.to_json(with_tables=not args.csv)


def _cell(text: str) -> tuple[int, int]:
    try:
        i, j = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"cell must look like i,j (got {text!r})") from None
    return i, j


def run_experiment(inst: Instance, args) -> tuple[int, dict]:
    name = args.name
    margins, pattern = inst.margins, inst.pattern
    if name == "clone":
        if pattern is not None:
            raise UsageError("the clone experiment takes margins without weights")
        steps = cloning_limit_check(margins, args.k, _config(args), budget=args.budget)
        return EXIT_OK, {"experiment": name, "steps": [s.to_json() for s in steps]}
    if name == "repulsion":
        if pattern is not None:
            raise UsageError("the repulsion experiment takes margins without weights")
        gap = repulsion_gap(margins, solve(margins, None, _config(args)))
        return EXIT_OK, {"experiment": name, **gap.to_json()}
    if name == "concentration":
        if args.subset:
            S = SubsetIndex.parse(args.subset, margins.m, margins.n)
        elif inst.subset is not None:
            S = inst.subset
        else:
            raise UsageError("concentration needs --subset or a subset in the instance")
        params = ConcentrationParams(args.delta, args.kappa, S, args.epsilon)
        rep = concentration_experiment(
            margins, pattern, params, samples=args.samples, seed=args.seed, budget=args.budget, workers=args.workers,
            config=_config(args),
        )
        return EXIT_OK, {"experiment": name, **rep.to_json()}
    if name == "entry-probe":
        probes = entry_distribution_probe(margins, args.k, _cell(args.cell), samples=args.samples, seed=args.seed)
        return EXIT_OK, {"experiment": name, "probes": [p.to_json() for p in probes]}
    raise UsageError(f"unknown experiment {name!r}")


COMMANDS = {
    "feasible": run_feasible,
    "solve": run_solve,
    "bounds": run_bounds,
    "count": run_count,
    "sample": run_sample,
    "experiment": run_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("solver")
    g.add_argument("--tol", type=float, default=None, help="gradient sup-norm target (default 1e-9*N)")
    g.add_argument("--max-sweeps", type=int, default=10_000)
    g.add_argument("--dual-cap", type=float, default=40.0)
    g = common.add_argument_group("sampling")
    g.add_argument("--samples", type=int, default=1000)
    g.add_argument("--budget", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=int, default=1)

    p = argparse.ArgumentParser(prog="binmargin", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("feasible", parents=[common], help="feasibility and interior check")
    sp.add_argument("instance", help="instance JSON file ('-' for stdin)")
    sp = sub.add_parser("solve", parents=[common], help="maximum entropy matrix and alpha")
    sp.add_argument("instance", help="instance JSON file ('-' for stdin)")
    sp = sub.add_parser("bounds", parents=[common], help="upper/lower bounds")
    sp.add_argument("--exact", action="store_true", help="also count exactly")
    sp.add_argument("instance", help="instance JSON file ('-' for stdin)")
    sp = sub.add_parser("count", parents=[common], help="exact count or estimate")
    sp.add_argument("--method", choices=["auto", "enumerate", "permanent", "estimate"], default="auto")
    sp.add_argument("instance", help="instance JSON file ('-' for stdin)")
    sp = sub.add_parser("sample", parents=[common], help="uniform tables by rejection")
    sp.add_argument("--csv", default=None, help="write tables to this CSV file")
    sp.add_argument("instance", help="instance JSON file ('-' for stdin)")
    sp = sub.add_parser("experiment", parents=[common], help="clone, repulsion, concentration, entry-probe")
    sp.add_argument("name", choices=["clone", "repulsion", "concentration", "entry-probe"])
    sp.add_argument("instance", help="instance JSON file ('-' for stdin)")
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--epsilon", type=float, default=None, help="override delta*ln(n)/sqrt(m) (experimental)")
    sp.add_argument("--subset", default=None)
    sp.add_argument("--cell", default="0,0")
    return p


_DEFAULT_BUDGETS = {"count": DEFAULT_NODE_BUDGET, "bounds": DEFAULT_NODE_BUDGET, "sample": 10_000_000}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.budget is None:
        args.budget = _DEFAULT_BUDGETS.get(args.command, 100_000_000)
        if args.command == "experiment" and args.name == "clone":
            args.budget = DEFAULT_NODE_BUDGET
    try:
        inst = load_instance(args.instance)
        code, body = COMMANDS[args.command](inst, args)
    except (UsageError, MarginError, HypothesisViolated, ParamOutOfRange, IndexError) as exc:
        print(f"binmargin: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Infeasible as exc:
        print(f"binmargin: infeasible: {exc}", file=sys.stderr)
        body = {"feasible": False, "reason": str(exc)}
        if args.command == "count":
            body = {"count": "0", "method": args.method}
        sys.stdout.write(dumps(_envelope(inst, args, body)) + "\n")
        return EXIT_INFEASIBLE
    except (SearchBudgetExceeded, InstanceTooLarge, BudgetExhausted) as exc:
        print(f"binmargin: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    sys.stdout.write(dumps(_envelope(inst, args, body)) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
