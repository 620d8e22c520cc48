"""Command-line interface.

Subcommands: ``fit`` (one analysis, curve CSV plus summary JSON), ``sweep``
(a sequence of growing violation sets with intervals, hypothesis bounds and
the sensitivity breakpoint), ``simulate`` (the coverage harness), and
``hypothesis`` (probability bounds for a one-sided effect). All numbers are
printed with round-trip-safe precision; errors exit with one
machine-parseable ``CODE: message`` line and a class-specific exit code.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .dataset import load_csv, project_out_covariates, standardise_instruments
from .errors import ConfigurationError, PossivError
from .posterior import GridOptions, build_curve, hypothesis_bounds, level_set
from .reduced_form import fit_reduced_form
from .simulate import (
    DEFAULT_MC_SAMPLES,
    experiment1_config,
    experiment2_config,
    parse_method_spec,
    run_experiment,
)
from .validify import Chi2, MonteCarlo, validify
from .violation import Box, L2Ball, format_violation, parse_violation


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_curve_csv(path, curve, validified=None) -> None:
    """Columns beta, possibility, and validified_possibility when present."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["beta", "possibility"] + (
            ["validified_possibility"] if validified is not None else []
        )
        writer.writerow(header)
        for i, beta in enumerate(curve.grid.points):
            row = [_fmt(beta), _fmt(curve.possibility[i])]
            if validified is not None:
                row.append(_fmt(validified[i]))
            writer.writerow(row)


def read_curve_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = list(zip(*[[float(c) for c in row] for row in reader]))
    beta = np.array(cols[0])
    poss = np.array(cols[1])
    valid = np.array(cols[2]) if len(header) > 2 else None
    return beta, poss, valid


def _add_data_flags(sp) -> None:
    sp.add_argument("--data", required=True, help="CSV file with a header row")
    sp.add_argument("--outcome", required=True, help="outcome column name")
    sp.add_argument("--treatment", required=True, help="treatment column name")
    sp.add_argument("--instruments", required=True, help="comma-separated instrument columns")
    sp.add_argument("--covariates", default="", help="comma-separated covariate columns")
    sp.add_argument("--intercept", action="store_true", help="add an intercept covariate")
    sp.add_argument(
        "--standardise", action="store_true",
        help="rescale instruments to unit standard deviation (affects the scale "
        "on which the violation set is interpreted)",
    )


def _add_analysis_flags(sp) -> None:
    sp.add_argument("--method", choices=["chi2", "mc"], default="chi2")
    sp.add_argument("--mc-samples", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--delta", type=float, default=0.05)
    sp.add_argument("--grid-points", type=int, default=513)


def _load_canonical(args):
    dataset = load_csv(
        args.data,
        outcome_col=args.outcome,
        treatment_col=args.treatment,
        instrument_cols=[c for c in args.instruments.split(",") if c],
        covariate_cols=[c for c in args.covariates.split(",") if c],
        add_intercept=args.intercept,
    )
    data = project_out_covariates(dataset)
    if args.standardise:
        data = standardise_instruments(data)
    return data


def _analyse(data, vset, args):
    fit = fit_reduced_form(data)
    curve = build_curve(fit, vset, GridOptions(points=args.grid_points))
    method = Chi2() if args.method == "chi2" else MonteCarlo(m=args.mc_samples, seed=args.seed)
    vc = validify(fit, vset, curve, data.z, method)
    return fit, curve, vc


def _summary(curve, vc, delta) -> dict:
    raw = level_set(curve, delta)
    val = level_set(vc, delta)
    flags = list(curve.flags)
    if raw.unbounded and "unbounded" not in flags:
        flags.append("unbounded")
    if not val.contiguous:
        flags.append("noncontiguous-level-set")
    return {
        "anchor": curve.grid.anchor,
        "normaliser_beta": curve.normaliser_beta,
        "interval_raw": [raw.lo, raw.hi],
        "interval_validified": [val.lo, val.hi],
        "delta": delta,
        "flags": flags,
    }


def cmd_fit(args) -> int:
    data = _load_canonical(args)
    vset = parse_violation(args.violation, data.p)
    _, curve, vc = _analyse(data, vset, args)
    write_curve_csv(f"{args.out}.curve.csv", curve, vc.validified)
    summary = _summary(curve, vc, args.delta)
    summary["violation"] = format_violation(vset)
    summary["method"] = args.method
    summary["n"] = data.n
    summary["p"] = data.p
    with open(f"{args.out}.summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json.dumps(summary))
    return 0


def _sweep_sets(args, p):
    sets = []
    if args.box_halfwidths:
        widths = [float(v) for v in args.box_halfwidths.split(",")]
        if any(h < 0 for h in widths) or widths != sorted(widths):
            raise ConfigurationError("box half-widths must be nonnegative and nondecreasing")
        for h in widths:
            sets.append(Box(lower=np.full(p, -h), upper=np.full(p, h)))
    if args.taus:
        taus = [float(v) for v in args.taus.split(",")]
        if taus != sorted(taus):
            raise ConfigurationError("ball radii must be nondecreasing")
        for tau in taus:
            sets.append(L2Ball(tau=tau))
    if args.violations:
        for text in args.violations.split(";"):
            sets.append(parse_violation(text, p))
    if not sets:
        raise ConfigurationError(
            "sweep needs --box-halfwidths, --taus, or --violations"
        )
    return sets


def cmd_sweep(args) -> int:
    data = _load_canonical(args)
    sets = _sweep_sets(args, data.p)
    rows = []
    breakpoint_label = None
    for vset in sets:
        _, curve, vc = _analyse(data, vset, args)
        ls = level_set(vc, args.delta)
        hb = hypothesis_bounds(vc, args.threshold, args.direction)
        contains = ls.lo <= args.threshold <= ls.hi
        if contains and breakpoint_label is None:
            breakpoint_label = format_violation(vset)
        rows.append(
            {
                "violation": format_violation(vset),
                "lo": ls.lo,
                "hi": ls.hi,
                "lower": hb.lower,
                "upper": hb.upper,
                "contains_threshold": contains,
                "unbounded": ls.unbounded,
            }
        )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["violation", "lo", "hi", "lower", "upper", "contains_threshold", "unbounded"]
        )
        for r in rows:
            writer.writerow(
                [
                    r["violation"],
                    _fmt(r["lo"]),
                    _fmt(r["hi"]),
                    _fmt(r["lower"]),
                    _fmt(r["upper"]),
                    int(r["contains_threshold"]),
                    int(r["unbounded"]),
                ]
            )
    print(
        json.dumps(
            {"breakpoint": breakpoint_label, "threshold": args.threshold, "rows": len(rows)}
        )
    )
    return 0


def cmd_hypothesis(args) -> int:
    data = _load_canonical(args)
    vset = parse_violation(args.violation, data.p)
    _, curve, vc = _analyse(data, vset, args)
    hb = hypothesis_bounds(vc, args.threshold, args.direction)
    out = {
        "violation": format_violation(vset),
        "threshold": args.threshold,
        "direction": args.direction,
        "lower": hb.lower,
        "upper": hb.upper,
        "conservative": hb.conservative,
    }
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=2)
            fh.write("\n")
    print(json.dumps(out))
    return 0


def cmd_simulate(args) -> int:
    if args.reps < 1:
        raise ConfigurationError("--reps must be >= 1")
    if args.experiment == 1:
        cfg = experiment1_config(alpha=args.alpha, seed=args.seed)
    else:
        cfg = experiment2_config(s=args.s, seed=args.seed)
    methods = [
        parse_method_spec(text, cfg.p, mc_samples=args.mc_samples)
        for text in args.methods.split(",")
    ]
    report = run_experiment(
        cfg, methods, reps=args.reps, seed=args.seed, jobs=args.jobs, delta=args.delta
    )
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "coverage", "mean_width", "reps", "errors"])
        for row in report.rows:
            writer.writerow(
                [row.method, _fmt(row.coverage), _fmt(row.mean_width), row.replications, row.errors]
            )
    for row in report.rows:
        print(f"{row.method}: coverage={row.coverage:.4f} width={row.mean_width:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="possiv",
        description="Treatment-effect inference under tolerated instrument invalidity",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit one analysis; writes curve CSV and summary JSON")
    _add_data_flags(fit)
    _add_analysis_flags(fit)
    fit.add_argument("--violation", required=True, help="e.g. singleton:0, box:-0.1:0.1, l2:0.5, none")
    fit.add_argument("--out", required=True, help="output prefix")
    fit.set_defaults(func=cmd_fit)

    sweep = sub.add_parser("sweep", help="sensitivity sweep over growing violation sets")
    _add_data_flags(sweep)
    _add_analysis_flags(sweep)
    sweep.add_argument("--box-halfwidths", default="", help="comma-separated half-widths h for [-h, h]")
    sweep.add_argument("--taus", default="", help="comma-separated ball radii")
    sweep.add_argument("--violations", default="", help="semicolon-separated violation specs")
    sweep.add_argument("--threshold", type=float, default=0.0)
    sweep.add_argument("--direction", choices=["greater", "less"], default="greater")
    sweep.add_argument("--out", required=True, help="output CSV path")
    sweep.set_defaults(func=cmd_sweep)

    hyp = sub.add_parser("hypothesis", help="lower/upper probability of a one-sided effect")
    _add_data_flags(hyp)
    _add_analysis_flags(hyp)
    hyp.add_argument("--violation", required=True)
    hyp.add_argument("--threshold", type=float, default=0.0)
    hyp.add_argument("--direction", choices=["greater", "less"], default="greater")
    hyp.add_argument("--out", default="", help="optional JSON output path")
    hyp.set_defaults(func=cmd_hypothesis)

    sim = sub.add_parser("simulate", help="coverage replication study")
    sim.add_argument("--experiment", type=int, choices=[1, 2], required=True)
    sim.add_argument("--alpha", type=float, default=0.0, help="invalidity (experiment 1)")
    sim.add_argument("--s", type=int, default=0, help="number of invalid instruments (experiment 2)")
    sim.add_argument("--reps", type=int, required=True)
    sim.add_argument(
        "--methods", required=True,
        help="comma-separated specs: tsls, singleton:0+chi2, box:-0.5:0.5+mc, ...",
    )
    sim.add_argument("--mc-samples", type=int, default=DEFAULT_MC_SAMPLES)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--delta", type=float, default=0.05)
    sim.add_argument("--jobs", type=int, default=None)
    sim.add_argument("--out", required=True, help="report CSV path")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PossivError as err:
        print(err.one_line(), file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
