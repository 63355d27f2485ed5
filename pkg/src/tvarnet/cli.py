"""Command-line interface: simulate, fit, cv, evaluate, report.

Exit codes: 0 success, 2 invalid input, 3 solver failure or
non-convergence (the solve report is still written), 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import io as tio
from .analysis import baseline_global_solve, evaluate
from .optimizer import AdmmConfig, admm_solve, build_design
from .selection import GridSpec, PointGrid, default_grid, grid_search, make_cv_plan
from .simulator import GeneratorConfig, generate
from .windowing import collapse_problem, uniform_partition

log = logging.getLogger("tvarnet")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


class SolverFailure(Exception):
    pass


def _read_json(path) -> dict:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise tio.ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise tio.ParseError(f"{path}: expected a JSON object")
    return d


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    fields = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        fields["seed"] = args.seed
    cfg = GeneratorConfig.from_dict(fields)
    truth, series = generate(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    tio.write_series_csv(series, os.path.join(args.out_dir, "series.csv"))
    tio.write_coefficients(truth.coeffs, os.path.join(args.out_dir, "truth.json"))
    tio.write_breakpoints_csv(truth.breakpoints, os.path.join(args.out_dir, "breakpoints.csv"))
    tio.write_text(os.path.join(args.out_dir, "config.json"), tio.dumps(cfg.to_dict()))
    log.info("simulated %d x %d samples with %d breakpoint triplets",
             series.P, series.T, len(truth.breakpoints))
    return EXIT_OK


# -- fit --------------------------------------------------------------------

def _solver_config(args) -> AdmmConfig:
    return AdmmConfig(rho=args.rho, eps_abs=args.tol_abs, eps_rel=args.tol_rel,
                      max_iters=args.max_iters, adaptive_rho=args.adaptive_rho)


def _load_problem(args):
    series = tio.read_series_csv(args.series)
    if series.T <= args.order:
        raise ValueError(f"series length {series.T} must exceed the order {args.order}")
    partition = uniform_partition(args.order, series.T, args.window_len)
    design = build_design(series, args.order)
    return series, partition, design


def _fit(design, partition, lam, gamma, method, base: AdmmConfig):
    if method == "baseline":
        return baseline_global_solve(design, lam, partition, base)
    cfg = AdmmConfig(lam=lam, gamma=gamma, rho=base.rho, eps_abs=base.eps_abs,
                     eps_rel=base.eps_rel, max_iters=base.max_iters,
                     adaptive_rho=base.adaptive_rho)
    return admm_solve(collapse_problem(design, partition), cfg)


def _write_fit(coeffs, report, out, report_path, meta):
    _ensure_parent(out)
    tio.write_coefficients(coeffs, out)
    if report_path:
        d = report.to_dict()
        # wall time would break byte-for-byte reproducibility of the file
        d.pop("wall_time", None)
        d.update(meta)
        _ensure_parent(report_path)
        tio.write_text(report_path, tio.dumps(d))
    log.info("%s after %d iterations, objective %.6g (%.2fs)",
             "converged" if report.converged else "NOT converged",
             report.iterations, report.objective, report.wall_time)
    if not report.converged:
        raise SolverFailure(f"solver did not converge in {report.iterations} iterations")


def cmd_fit(args) -> int:
    if args.lam < 0 or args.gamma < 0:
        raise ValueError("--lambda and --gamma must be nonnegative")
    _, partition, design = _load_problem(args)
    coeffs, report = _fit(design, partition, args.lam, args.gamma, args.method, _solver_config(args))
    meta = {"method": args.method, "lambda": args.lam,
            "gamma": args.gamma if args.method == "proposed" else 0.0,
            "order": args.order, "window_len": args.window_len}
    _write_fit(coeffs, report, args.out, args.report, meta)
    return EXIT_OK


# -- cv ---------------------------------------------------------------------

def cmd_cv(args) -> int:
    _, partition, design = _load_problem(args)
    problem = collapse_problem(design, partition)
    if args.grid:
        grid = PointGrid(tuple(tio.read_grid_csv(args.grid)))
    else:
        grid = default_grid(problem, args.grid_size, args.grid_decades)
    plan = make_cv_plan(args.order, design.T, args.folds)
    base = _solver_config(args)
    result = grid_search(problem, partition, grid, plan, base, args.method, args.workers)
    _ensure_parent(args.out_table)
    tio.write_score_table(result.table, args.out_table)
    best = {"lambda": result.best_lambda, "gamma": result.best_gamma, "score": result.best_score,
            "method": args.method, "folds": args.folds, "order": args.order,
            "window_len": args.window_len, "on_boundary": result.on_boundary}
    _ensure_parent(args.out_best)
    tio.write_text(args.out_best, tio.dumps(best))
    log.info("selected lambda=%g gamma=%g (score %.6g)",
             result.best_lambda, result.best_gamma, result.best_score)
    if args.fit_out:
        coeffs, report = _fit(design, partition, result.best_lambda, result.best_gamma,
                              args.method, base)
        meta = {k: best[k] for k in ("method", "lambda", "gamma", "order", "window_len")}
        _write_fit(coeffs, report, args.fit_out, args.fit_report, meta)
    return EXIT_OK


# -- evaluate / report ------------------------------------------------------

def cmd_evaluate(args) -> int:
    est = tio.read_coefficients(args.estimate)
    truth = tio.read_coefficients(args.truth)
    series = tio.read_series_csv(args.series) if args.series else None
    if series is not None and (series.P, series.T) != (truth.P, truth.T):
        raise ValueError(f"series is {series.P} x {series.T} but truth has P={truth.P}, T={truth.T}")
    bps = tio.read_breakpoints_csv(args.breakpoints) if args.breakpoints else None
    metrics = evaluate(est, truth, series, time_tol=args.time_tol, detection_tol=args.detect_tol,
                       zero_tol=args.zero_tol, truth_breakpoints=bps)
    text = tio.dumps(metrics.to_dict())
    if args.out:
        _ensure_parent(args.out)
        tio.write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    coeffs = tio.read_coefficients(args.estimate)
    _ensure_parent(args.out)
    tio.write_norm_report(coeffs, args.out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def _nonneg_float(s):
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {s}")
    return v


def _add_model_flags(p):
    p.add_argument("series", help="series CSV (header t,<labels>)")
    p.add_argument("--order", type=_positive_int, default=4, help="VAR order L (default 4)")
    p.add_argument("--window-len", type=_positive_int, default=21,
                   help="instants per window; 1 gives one block per instant (default 21)")
    p.add_argument("--method", choices=("proposed", "baseline"), default="proposed")
    p.add_argument("--rho", type=_positive_float, default=1.0)
    p.add_argument("--max-iters", type=_positive_int, default=5000)
    p.add_argument("--tol-abs", type=_positive_float, default=1e-6)
    p.add_argument("--tol-rel", type=_positive_float, default=1e-4)
    p.add_argument("--adaptive-rho", action="store_true", help="rebalance rho every 10 iterations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvarnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a ground-truth model and one realization")
    p.add_argument("--config", help="generator config JSON (missing fields take defaults)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="estimate coefficients at fixed lambda, gamma")
    _add_model_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True,
                   help="group-lasso weight (TV weight for the baseline)")
    p.add_argument("--gamma", type=float, default=0.0, help="group-TV weight")
    p.add_argument("--out", required=True, help="coefficients JSON")
    p.add_argument("--report", help="solve report JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="cross-validate a (lambda, gamma) grid")
    _add_model_flags(p)
    p.add_argument("--grid", help="CSV of candidate points (header lambda,gamma)")
    p.add_argument("--grid-size", type=_positive_int, default=5,
                   help="points per axis of the automatic log grid (default 5)")
    p.add_argument("--grid-decades", type=_positive_float, default=4.0,
                   help="decades spanned below lambda_max (default 4)")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--workers", type=_positive_int,
                   help="parallel folds (default: $TVARNET_WORKERS or 1)")
    p.add_argument("--out-table", required=True, help="score table CSV")
    p.add_argument("--out-best", required=True, help="selected parameters JSON")
    p.add_argument("--fit-out", help="also fit at the selected point and write coefficients here")
    p.add_argument("--fit-report", help="solve report for --fit-out")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("evaluate", help="recovery metrics of an estimate against ground truth")
    p.add_argument("estimate")
    p.add_argument("truth")
    p.add_argument("--series", help="series CSV for the forecast NMSE")
    p.add_argument("--breakpoints", help="true breakpoints CSV (default: derived from truth)")
    p.add_argument("--time-tol", type=int, help="matching tolerance in instants (default: median window length)")
    p.add_argument("--detect-tol", type=_nonneg_float,
                   help="filter-jump threshold (default: 1e-3 x median nonzero filter norm)")
    p.add_argument("--zero-tol", type=_nonneg_float, default=1e-10)
    p.add_argument("--out", help="metrics JSON (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="long-format filter-norm CSV for plotting")
    p.add_argument("estimate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SolverFailure as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    except ArithmeticError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_SOLVER
    except (ValueError, TypeError, KeyError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
