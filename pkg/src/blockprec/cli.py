"""Command-line interface: ``blockprec <subcommand> [options]``.

Exit status is 0 on success, 1 for usage or input errors and 2 for numerical
failures (non-convergence, singular configurations, empty importance weights,
chains leaving the PD cone).

Every subcommand accepts ``--seed``, ``--config FILE.json``, ``--out DIR`` and
``--format json|csv``.  Keys in the config file use the long option names with
dashes replaced by underscores (``{"lambda_d": 1.0, "partition": "1,1,2"}``);
options given on the command line take precedence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .harness import (
    METHODS,
    CvOptions,
    Dataset,
    DegenerateColumnError,
    ParseError,
    cross_validate,
    ingest_csv,
    penalty_grid,
    standardize,
    synth_blocks,
    write_matrix_csv,
)
from .model import (
    EstimationFailedError,
    Partition,
    PenaltyConfig,
    SingularityError,
    UnsupportedConfigError,
    estimate_logz_is,
    exact_logz_2d,
    log_bound,
)
from .pdcore import InvalidInputError, NoIntervalError, SampleStats, as_sym
from .sampler import ChainConfig, InvariantError, MassUnderflowError, gibbs_chain
from .solver import ConvergenceError, SolverOptions, fit_gl12, fit_l1, tikhonov
from .structure import SearchOptions, search

NUMERICAL_ERRORS = (
    ConvergenceError,
    SingularityError,
    EstimationFailedError,
    NoIntervalError,
    MassUnderflowError,
    InvariantError,
    np.linalg.LinAlgError,
    FloatingPointError,
)
INPUT_ERRORS = (
    ParseError,
    InvalidInputError,
    DegenerateColumnError,
    UnsupportedConfigError,
    ValueError,
    OSError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# --- output helpers -------------------------------------------------------------


def _clean(obj):
    """Make a report JSON-safe: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return obj


def canonical_json(report: dict) -> str:
    """Stable serialization with the ``timing`` block removed."""
    body = {k: v for k, v in report.items() if k != "timing"}
    return json.dumps(_clean(body), sort_keys=True, indent=2)


def _dump_json(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _emit(args, report: dict, matrices: dict | None = None, stdout=None):
    """Write the report and matrices to ``--out`` or to stdout."""
    stdout = stdout or sys.stdout
    matrices = matrices or {}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            fh.write(_dump_json(report))
        for name, M in matrices.items():
            write_matrix_csv(os.path.join(args.out, f"{name}.csv"), M)
        return
    if args.format == "csv" and matrices:
        for name, M in matrices.items():
            if len(matrices) > 1:
                stdout.write(f"# {name}\n")
            np.savetxt(stdout, np.asarray(M, dtype=float), delimiter=",", fmt="%.17g")
        return
    stdout.write(_dump_json(report))


# --- argument handling ----------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _partition(labels, dim=None) -> Partition:
    if labels is None:
        if dim is None:
            raise UsageError("either --partition or --dim is required")
        return Partition.single(dim)
    if isinstance(labels, str):
        labels = _int_list(labels)
    p = Partition.from_labels(list(labels))
    if dim is not None and p.D != dim:
        raise UsageError(f"--partition has {p.D} labels but --dim is {dim}")
    return p


def _config(args) -> PenaltyConfig:
    missing = [n for n in ("lambda_d", "lambda_1", "lambda_0") if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing penalty option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return PenaltyConfig(args.lambda_d, args.lambda_1, args.lambda_0, args.alpha_0)


def _penalty_args(p):
    p.add_argument("--lambda-d", type=float, help="diagonal penalty")
    p.add_argument("--lambda-1", type=float, help="within-group penalty")
    p.add_argument("--lambda-0", type=float, help="between-group penalty")
    p.add_argument("--alpha-0", type=float, default=None, help="Dirichlet strength (default 1)")


def _load_input(args) -> tuple[Dataset | None, SampleStats]:
    if getattr(args, "scatter", None):
        S = np.loadtxt(args.scatter, delimiter=",", ndmin=2)
        if args.n is None:
            raise UsageError("--scatter requires --n")
        return None, SampleStats.from_scatter(as_sym(S), args.n)
    if not getattr(args, "input", None):
        raise UsageError("an --input data file is required")
    ds = ingest_csv(args.input, has_header=args.header)
    if args.raw:
        return ds, SampleStats.from_data(ds.rows)
    _, stats = standardize(ds)
    return ds, stats


def _data_args(p, scatter=False):
    p.add_argument("--input", help="CSV data file (rows are samples)")
    p.add_argument("--header", action="store_true", default=None, help="first CSV row holds column names")
    p.add_argument("--raw", action="store_true", default=None, help="center only, do not scale columns")
    if scatter:
        p.add_argument("--scatter", help="CSV covariance matrix used instead of --input")
        p.add_argument("--n", type=int, help="sample count for --scatter")


def _solver_args(p, tol="1e-6", max_iter=5000):
    p.add_argument("--tol", type=float, help=f"duality-gap tolerance (default {tol})")
    p.add_argument("--max-iter", type=int, help=f"solver iteration cap (default {max_iter})")


def _solver_opts(args, base: SolverOptions | None = None) -> SolverOptions:
    kw = {}
    if args.tol is not None:
        kw["tol"] = kw["kkt_tol"] = args.tol
    if args.max_iter is not None:
        kw["max_iter"] = args.max_iter
    return dataclasses.replace(base, **kw) if base is not None else SolverOptions(**kw)


DEFAULTS = {
    "seed": 0,
    "format": "json",
    "alpha_0": 1.0,
    "header": False,
    "raw": False,
    "kind": "gl1",
    "n_samples": 100_000,
    "sweeps": 1200,
    "burn_in": 200,
    "chains": 1,
    "grid_points": 10,
    "folds": 5,
    "n": None,
    "strength": 1.5,
    "noise": 0.0,
    "methods": "T,IL1,GL12-k,GL1-ue",
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--config", help="JSON file of option defaults")
    common.add_argument("--out", help="output directory (report.json plus matrix CSVs)")
    common.add_argument("--format", choices=("json", "csv"), help="stdout format when --out is absent")

    parser = _Parser(prog="blockprec", description="Sparse block-structured precision estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("estimate", parents=[common], help="fit a precision matrix with fixed penalties")
    _data_args(p, scatter=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--tikhonov", type=float, metavar="LAMBDA", help="closed form (S + lambda I)^-1")
    g.add_argument("--il1", type=float, metavar="LAMBDA", help="uniform l1 penalty")
    p.add_argument("--kind", choices=("gl1", "gl12"), help="group penalty family (default gl1)")
    p.add_argument("--partition", help="comma-separated group labels")
    _penalty_args(p)
    _solver_args(p)

    p = sub.add_parser("search", parents=[common], help="learn the block structure")
    _data_args(p, scatter=True)
    p.add_argument("--method", choices=("gl1-ug", "gl1-ue", "gl12-ug", "gl12-ue"),
                   help="family and search: u = unknown groups, g = greedy, e = exhaustive")
    p.add_argument("--prior-term", choices=("alpha0_over_k", "alpha0"), help="Dirichlet prior parameter")
    _penalty_args(p)
    _solver_args(p)

    p = sub.add_parser("sample", parents=[common], help="Gibbs sampling from the matrix prior")
    p.add_argument("--kind", choices=("gl1", "gl12"))
    p.add_argument("--partition", help="comma-separated group labels")
    p.add_argument("--dim", type=int, help="dimension when --partition is absent (one group)")
    p.add_argument("--sweeps", type=int, help="total sweeps including burn-in (default 1200)")
    p.add_argument("--burn-in", type=int, help="discarded sweeps (default 200)")
    p.add_argument("--chains", type=int, help="independent chains, seeds seed..seed+chains-1")
    _penalty_args(p)

    p = sub.add_parser("bound", parents=[common], help="closed-form normalizer upper bound")
    p.add_argument("--kind", choices=("gl1", "gl12"))
    p.add_argument("--partition", help="comma-separated group labels")
    p.add_argument("--dim", type=int)
    _penalty_args(p)

    p = sub.add_parser("logz", parents=[common], help="importance-sampling log normalizer")
    p.add_argument("--kind", choices=("gl1", "gl12"))
    p.add_argument("--partition", help="comma-separated group labels")
    p.add_argument("--dim", type=int)
    p.add_argument("--n-samples", type=int, help="importance samples (default 100000)")
    _penalty_args(p)

    p = sub.add_parser("cv", parents=[common], help="cross-validated test log likelihood")
    p.add_argument("--input", help="CSV data file")
    p.add_argument("--header", action="store_true", default=None)
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--planted", help="group labels used by GL12-k")
    p.add_argument("--grid-points", type=int, help="points in the 10^4..1 grid (default 10)")
    p.add_argument("--grid-hi", type=float, help="largest grid value (default 1e4)")
    p.add_argument("--grid-lo", type=float, help="smallest grid value (default 1)")
    p.add_argument("--folds", type=int, help="outer folds (default 5)")
    _solver_args(p, tol="1e-5", max_iter=3000)

    p = sub.add_parser("synth", parents=[common], help="generate planted block data")
    p.add_argument("--groups", help="comma-separated group sizes, e.g. 5,5,5")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--strength", type=float, help="within-block coupling (default 1.5)")
    p.add_argument("--noise", type=float, help="between-block noise amplitude (default 0)")
    return parser


def _resolve(args, parser):
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"cannot read --config {args.config}: {err}") from None
        if not isinstance(cfg, dict):
            raise UsageError("--config must hold a JSON object")
    for key, val in cfg.items():
        key = key.replace("-", "_")
        if not hasattr(args, key):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if getattr(args, key) is None:
            setattr(args, key, val)
    for key, val in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, val)
    return args


# --- subcommands ------------------------------------------------------------------------


def cmd_estimate(args):
    t0 = time.perf_counter()
    _, stats = _load_input(args)
    S, n = stats.scatter, stats.n
    opts = _solver_opts(args)
    if args.tikhonov is not None:
        omega, method = tikhonov(S, args.tikhonov), "tikhonov"
    elif args.il1 is not None:
        omega, method = fit_l1(S, np.full(S.shape, args.il1), n=n, opts=opts), "il1"
    else:
        p = _partition(args.partition, stats.dim)
        c = _config(args)
        if args.kind == "gl1":
            from .model import entry_penalties

            omega = fit_l1(S, entry_penalties(p, c), n=n, opts=opts)
        else:
            omega = fit_gl12(S, p, c, n=n, opts=opts)
        method = args.kind
    report = {
        "command": "estimate",
        "method": method,
        "n": n,
        "dim": stats.dim,
        "omega": omega,
        "timing": {"seconds": time.perf_counter() - t0},
    }
    return report, {"omega": omega}


def cmd_search(args):
    _, stats = _load_input(args)
    method = args.method or "gl1-ue"
    kind, tag = method.split("-")
    opts = SearchOptions(
        kind=kind,
        method="greedy" if tag == "ug" else "exhaustive",
        prior_term=args.prior_term or "alpha0_over_k",
        solver=_solver_opts(args),
    )
    rep = search(stats, _config(args), opts)
    report = {"command": "search", **rep.to_dict()}
    report["timing"] = rep.timing
    return report, {"omega": rep.final_omega}


def cmd_sample(args):
    t0 = time.perf_counter()
    p = _partition(args.partition, args.dim)
    c = _config(args)
    chains = []
    for k in range(args.chains):
        cfg = ChainConfig(n_sweeps=args.sweeps, burn_in=args.burn_in, seed=args.seed + k)
        chains.append(gibbs_chain(args.kind, p, c, cfg))
    mean_abs = np.mean([ch.mean_abs for ch in chains], axis=0)
    report = {
        "command": "sample",
        "kind": args.kind,
        "partition": p.to_list(),
        "mean_abs": mean_abs,
        "mean_diag": float(np.mean(np.diag(mean_abs))),
        "chains": [ch.to_dict() for ch in chains],
        "timing": {"seconds": time.perf_counter() - t0},
    }
    return report, {"mean_abs": mean_abs}


def cmd_bound(args):
    p = _partition(args.partition, args.dim)
    c = _config(args)
    lb = log_bound(p, c, args.kind)
    return {"command": "bound", "kind": args.kind, "partition": p.to_list(), "log_bound": lb}, None


def cmd_logz(args):
    t0 = time.perf_counter()
    p = _partition(args.partition, args.dim)
    c = _config(args)
    est, se = estimate_logz_is(p, c, args.kind, n_samples=args.n_samples, seed=args.seed)
    report = {
        "command": "logz",
        "kind": args.kind,
        "partition": p.to_list(),
        "logz_is": est,
        "std_err": se,
        "log_bound": log_bound(p, c, args.kind),
        "n_samples": args.n_samples,
    }
    if p.D == 2:
        try:
            report["logz_exact"] = exact_logz_2d(c, same_group=p.K == 1)
        except (UnsupportedConfigError, SingularityError) as err:
            report["logz_exact"] = None
            report["exact_note"] = str(err)
    report["timing"] = {"seconds": time.perf_counter() - t0}
    return report, None


def cmd_cv(args):
    if not args.input:
        raise UsageError("an --input data file is required")
    ds = ingest_csv(args.input, has_header=args.header)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    planted = _partition(args.planted) if args.planted else None
    grid = penalty_grid(args.grid_points, args.grid_hi or 1e4, args.grid_lo or 1.0)
    opts = CvOptions(methods=methods, n_folds=args.folds, grid=tuple(grid), planted=planted, seed=args.seed)
    if args.tol is not None or args.max_iter is not None:
        opts.solver = _solver_opts(args, opts.solver)
    rep = cross_validate(ds, opts)
    return {"command": "cv", **rep.to_dict()}, None


def cmd_synth(args):
    if not args.groups or args.n is None:
        raise UsageError("synth needs --groups and --n")
    sizes = _int_list(args.groups)
    ds, part, omega = synth_blocks(sizes, args.n, args.strength, args.noise, args.seed)
    report = {
        "command": "synth",
        "sizes": sizes,
        "n": args.n,
        "planted": part.to_list(),
        "provenance": ds.provenance,
        "omega": omega,
    }
    return report, {"data": ds.rows, "omega": omega}


COMMANDS = {
    "estimate": cmd_estimate,
    "search": cmd_search,
    "sample": cmd_sample,
    "bound": cmd_bound,
    "logz": cmd_logz,
    "cv": cmd_cv,
    "synth": cmd_synth,
}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_help())
        args = _resolve(args, parser)
        report, matrices = COMMANDS[args.command](args)
        if args.command == "synth" and not args.out and args.format == "csv":
            matrices = {"data": matrices["data"]}
        _emit(args, report, matrices, stdout)
        return 0
    except UsageError as err:
        stderr.write(f"{err}\n")
        return 1
    except NUMERICAL_ERRORS as err:
        stderr.write(f"numerical failure: {err}\n")
        return 2
    except INPUT_ERRORS as err:
        stderr.write(f"error: {err}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
