"""Batch command-line interface: fit, gof, rank, simulate.

Fits are addressed by directory: ``gof`` and ``rank`` reload the family,
link and factors from the fit directory rather than accepting them inline,
so diagnostics can never disagree with the fit they describe.

Exit codes: 0 success, 1 usage/data error, 2 fit ran out of iterations
(results are still written, flagged in the metadata).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from . import simlab
from .canonicalize import canonicalize, center_fit
from .engine import DataMatrix, ModelSpec, dmf_fit
from .families import estimate_dispersion_mom, get_family, get_link
from .gof import ghl_test
from .rank import rank_report

WORKERS_ENV = "DEVMF_WORKERS"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns the exit code."""

    def error(self, message):
        raise CliError(message)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="devmf",
                     description="Deviance matrix factorization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_input_flags(p):
        p.add_argument("-i", "--input", required=True, help="data matrix file")
        p.add_argument("--weights", help="weight matrix file (same shape as the data)")
        p.add_argument("--format", default="csv", choices=("csv", "matrixmarket"),
                       help="input format (default csv)")
        p.add_argument("--missing-as-holdout", action="store_true",
                       help="MatrixMarket only: unlisted entries get weight 0")

    fit = sub.add_parser("fit", help="fit a factorization and write it to a directory")
    add_input_flags(fit)
    fit.add_argument("--family", required=True,
                     choices=("gaussian", "poisson", "gamma", "bernoulli", "binomial", "negbin"))
    fit.add_argument("--link", required=True,
                     choices=("identity", "log", "logit", "probit", "cloglog",
                              "inverse", "negbin-canonical"))
    fit.add_argument("-q", "--rank", required=True, type=int)
    fit.add_argument("--dispersion", default=None,
                     help="dispersion value for gamma/negbin, or 'mom' for the "
                          "moment estimate")
    fit.add_argument("--trials", type=float, default=None,
                     help="binomial trial count (weight multiplier)")
    fit.add_argument("--center", action="store_true",
                     help="split off a per-column intercept (all-ones structure)")
    fit.add_argument("--center-out-rank", type=int, default=None,
                     help="residual rank kept after centering (default: fit rank)")
    fit.add_argument("--max-iter", type=int, default=200)
    fit.add_argument("--rel-tol", type=float, default=1e-6)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("-o", "--out", required=True, help="output fit directory")
    fit.set_defaults(func=cmd_fit)

    gof = sub.add_parser("gof", help="family/link adequacy test for a written fit")
    add_input_flags(gof)
    gof.add_argument("--fit-dir", required=True)
    gof.add_argument("-G", "--groups", type=int, default=None)
    gof.add_argument("--write-pearson", action="store_true",
                     help="also write the squared Pearson residual matrix")
    gof.add_argument("-o", "--out", default=None, help="output directory (default: fit dir)")
    gof.set_defaults(func=cmd_gof)

    rank = sub.add_parser("rank", help="estimate the factorization rank from a "
                                       "high-rank fit")
    rank.add_argument("--fit-dir", required=True)
    rank.add_argument("--mode", default="covariance", choices=("covariance", "gram"))
    rank.add_argument("--q-max", type=int, default=None)
    rank.add_argument("-o", "--out", default=None, help="output directory (default: fit dir)")
    rank.set_defaults(func=cmd_rank)

    sim = sub.add_parser("simulate", help="run a named simulation experiment")
    sim.add_argument("--experiment", required=True,
                     choices=("significance-table2", "dispersion-sensitivity",
                              "power-grid", "rank-table3"))
    sim.add_argument("--replicates", type=int, default=None)
    sim.add_argument("--cases", default=None,
                     help="comma-separated case numbers (significance/rank experiments)")
    sim.add_argument("--seed", type=int, default=20260810)
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--workers", type=int, default=None,
                     help=f"parallel replicate workers (default ${WORKERS_ENV} or 1)")
    sim.add_argument("-o", "--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)

    return parser


def _load_data(args) -> DataMatrix:
    fmt = "matrixmarket" if args.format == "matrixmarket" else "csv"
    data = dio.read_matrix(args.input, fmt=fmt, missing_as_holdout=args.missing_as_holdout)
    if args.weights:
        w = dio.read_matrix(args.weights, fmt="csv").x
        data = DataMatrix(data.x, w)
    return data


def cmd_fit(args) -> int:
    data = _load_data(args)
    dispersion_source = "default"
    phi = None
    if args.dispersion is not None:
        if args.dispersion == "mom":
            phi = estimate_dispersion_mom(data.x, data.w)
            dispersion_source = "mom"
        else:
            phi = float(args.dispersion)
            dispersion_source = "fixed"
    family = get_family(args.family, phi=phi, trials=args.trials)
    link = get_link(args.link, phi=family.phi)
    spec = ModelSpec(family=family, link=link, rank=args.rank,
                     max_iter=args.max_iter, rel_tol=args.rel_tol, seed=args.seed)
    raw = dmf_fit(data, spec)
    if args.center:
        fit = center_fit(raw, out_rank=args.center_out_rank)
    else:
        fit = canonicalize(raw)
    extra = {
        "dispersion_source": dispersion_source,
        "rel_tol": spec.rel_tol,
        "max_iter": spec.max_iter,
        "jitter": spec.jitter,
        "seed": spec.seed,
        "input": str(args.input),
    }
    dio.write_fit(args.out, fit, family, link, extra_meta=extra)
    status = "converged" if raw.converged else "max-iter reached"
    print(f"fit: rank {args.rank} {family.name}/{link.name}, deviance "
          f"{raw.deviance:.6g} after {raw.iterations} cycles ({status}); "
          f"wrote {args.out}")
    return 0 if raw.converged else 2


def cmd_gof(args) -> int:
    bundle = dio.read_fit(args.fit_dir)
    data = _load_data(args)
    report = ghl_test(data, bundle.fit, bundle.family, bundle.link,
                      n_groups=args.groups)
    out = Path(args.out) if args.out else Path(args.fit_dir)
    dio.write_gof_report(out, report)
    if args.write_pearson:
        dio.write_matrix(out / "pearson.csv", report.pearson)
    print(f"gof: statistic {report.statistic:.6g} on {report.df} df, "
          f"p-value {report.p_value:.6g}; wrote {out}")
    return 0


def cmd_rank(args) -> int:
    bundle = dio.read_fit(args.fit_dir)
    report = rank_report(bundle.fit, q_max=args.q_max, mode=args.mode)
    out = Path(args.out) if args.out else Path(args.fit_dir)
    dio.write_rank_report(out, report)
    note = " (no signal)" if report.no_signal else ""
    print(f"rank: q_hat {report.q_hat} with delta {report.delta:.6g} "
          f"(mode {report.mode}, q_max {report.q_max}){note}; wrote {out}")
    return 0


def _select_cases(all_cases, spec: str | None):
    if spec is None:
        return all_cases
    try:
        wanted = sorted({int(tok) for tok in spec.split(",") if tok.strip()})
    except ValueError:
        raise CliError(f"--cases must be comma-separated integers, got {spec!r}") from None
    bad = [k for k in wanted if not 1 <= k <= len(all_cases)]
    if bad:
        raise CliError(f"case numbers out of range 1..{len(all_cases)}: {bad}")
    return [all_cases[k - 1] for k in wanted]


def cmd_simulate(args) -> int:
    workers = args.workers if args.workers is not None else _default_workers()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.experiment
    if name == "significance-table2":
        cases = _select_cases(simlab.table2_cases(seed=args.seed), args.cases)
        reps = args.replicates or 20
        table = simlab.run_significance(cases, replicates=reps, workers=workers)
    elif name == "dispersion-sensitivity":
        design = simlab.table2_cases(seed=args.seed)[1].design
        reps = args.replicates or 50
        table = simlab.run_dispersion_sensitivity(design, replicates=reps,
                                                  workers=workers)
    elif name == "power-grid":
        reps = args.replicates or 10
        table = simlab.run_power_grid(replicates=reps, workers=workers, seed=args.seed)
        rows = ["design\tfit\tpower\treplicates"]
        rows += [f"{d}\t{f}\t{repr(v)}\t{k}"
                 for d, f, v, k in simlab.power_table(table, alpha=args.alpha)]
        (out / "power_summary.tsv").write_text("\n".join(rows) + "\n")
    elif name == "rank-table3":
        cases = _select_cases(simlab.table3_cases(seed=args.seed), args.cases)
        reps = args.replicates or 100
        table = simlab.run_rank_cases(cases, replicates=reps, workers=workers)
        rates = simlab.recovery_rates(table)
        rows = ["design\trecovery_rate"]
        rows += [f"{d}\t{repr(v)}" for d, v in sorted(rates.items())]
        (out / "recovery_summary.tsv").write_text("\n".join(rows) + "\n")
    else:  # unreachable: argparse restricts choices
        raise CliError(f"unknown experiment {name!r}")
    dio.write_result_table(out / f"{name}.tsv", table)
    print(f"simulate: {name} wrote {out / (name + '.tsv')}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
