"""Command-line front end: run, calibrate, compare, sweep."""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import detection, harness
from .scenario import Scenario, _coerce, load_scenario

_SCENARIO_FIELDS = [f.name for f in dataclasses.fields(Scenario)]
# Short CLI spellings that map onto scenario fields.
_FLAG_ALIASES = {"detector": "detector_id", "estimator": "estimator_id",
                 "seed": "rng_seed"}


def _add_scenario_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("scenario overrides")
    for name in _SCENARIO_FIELDS:
        group.add_argument(f"--{name.replace('_', '-')}", dest=f"field_{name}",
                           metavar="V", help=argparse.SUPPRESS)
    group.add_argument("--detector", metavar="ID",
                       help="detector_id override (np|ml|mmv|nnls|prb-ml|perfect)")
    group.add_argument("--estimator", metavar="ID",
                       help="estimator_id override (ci-diag|ci-perue|prb|true)")
    group.add_argument("--seed", metavar="S", help="rng_seed override")


def _scenario_from_args(args) -> Scenario:
    overrides = {}
    for name in _SCENARIO_FIELDS:
        value = getattr(args, f"field_{name}", None)
        if value is not None:
            overrides[name] = value
    for flag, name in _FLAG_ALIASES.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if args.config:
        return load_scenario(args.config, overrides)
    typed = {k: _coerce(k, v) if isinstance(v, str) else v for k, v in overrides.items()}
    return Scenario(**typed).validate()


def _cmd_run(args) -> int:
    scenario = _scenario_from_args(args)
    threshold = float(args.threshold) if args.threshold is not None else None
    result = harness.run(scenario, trials=args.trials, threshold=threshold,
                         workers=args.workers, cache_path=args.calibration)
    if args.out:
        harness.write_outputs(result, args.out, scenario)
    print(f"trials={result.trials} samples={result.samples.size} "
          f"p_md={result.p_md:.3e} p_fa={result.p_fa:.3e}")
    for p in result.quantile_grid:
        tag = "" if result.reliable[p] else " (unreliable)"
        print(f"quantile {p:g}: {result.quantiles[p]:.6g} bps{tag}")
    return 0


def _cmd_calibrate(args) -> int:
    scenario = _scenario_from_args(args)
    result = detection.calibrate_threshold(scenario, trials=args.trials,
                                           workers=args.workers)
    print(f"detector={result.detector_id} p_fa={result.p_fa:g} "
          f"threshold={result.threshold:.6g} null_samples={result.n_null}")
    if args.cache:
        detection.store_calibration(args.cache, result)
        print(f"stored in {args.cache}")
    return 0


def _cmd_compare(args) -> int:
    summaries = [harness.load_summary(d) for d in args.rundirs]
    grids = [sorted(float(k.split("_", 1)[1]) for k in s if k.startswith("quantile_")
                    and not k.endswith("_reliable")) for s in summaries]
    if any(g != grids[0] for g in grids):
        print("error: runs use mismatched quantile grids", file=sys.stderr)
        return 2
    results = []
    for s, grid in zip(summaries, grids):
        quantiles = {p: float(s[f"quantile_{p:g}"]) for p in grid}
        reliable = {p: bool(int(s.get(f"quantile_{p:g}_reliable", 1))) for p in grid}
        results.append(harness.RunResult(
            samples=np.array([]), p_md=float(s["p_md"]),
            p_fa=float(s["p_fa"]), quantile_grid=tuple(sorted(grid, reverse=True)),
            quantiles=quantiles, reliable=reliable,
            trials=int(s["trials"]), seed=int(s["seed"]),
            scenario_hash=s["scenario_hash"], wall_clock_s=0.0, threshold=None,
            n_active_total=int(s["n_active_total"]),
            n_misdetected=int(s["n_misdetected"]),
            n_false_alarm=int(s["n_false_alarm"]),
            n_inactive_total=int(s["n_inactive_total"])))
    report = harness.compare_scenarios(results, args.asserts or ())
    print(report.text())
    return 0 if report.ok else 1


def _cmd_sweep(args) -> int:
    scenario = _scenario_from_args(args)
    rows = []
    for raw in args.values.split(","):
        swept = scenario.replace(**{args.field: _coerce(args.field, raw)}).validate()
        result = harness.run(swept, trials=args.trials, workers=args.workers,
                             cache_path=args.calibration)
        if args.out:
            harness.write_outputs(result, f"{args.out}/{args.field}_{raw}", swept)
        rows.append((raw, result))
    header = ["value", "p_md", "p_fa"] + [f"q{p:g}" for p in rows[0][1].quantile_grid]
    print(",".join(header))
    for raw, result in rows:
        cells = [raw, f"{result.p_md:.6g}", f"{result.p_fa:.6g}"]
        cells += [f"{result.quantiles[p]:.6g}" for p in result.quantile_grid]
        print(",".join(cells))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfmimo",
                                     description="Grant-free massive MIMO uplink "
                                                 "Monte-Carlo simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a Monte-Carlo run")
    run_p.add_argument("--config", metavar="PATH", help="scenario INI file")
    run_p.add_argument("--trials", type=int, default=1000, metavar="N")
    run_p.add_argument("--out", metavar="DIR", help="write samples/summary/cdf here")
    run_p.add_argument("--workers", type=int, default=1, metavar="W")
    run_p.add_argument("--threshold", metavar="X", help="explicit detector threshold")
    run_p.add_argument("--calibration", metavar="PATH", help="threshold cache file")
    _add_scenario_flags(run_p)
    run_p.set_defaults(fn=_cmd_run)

    cal_p = sub.add_parser("calibrate", help="calibrate a detector threshold")
    cal_p.add_argument("--config", metavar="PATH")
    cal_p.add_argument("--trials", type=int, default=None, metavar="N")
    cal_p.add_argument("--workers", type=int, default=1, metavar="W")
    cal_p.add_argument("--cache", metavar="PATH", help="store result in this cache file")
    _add_scenario_flags(cal_p)
    cal_p.set_defaults(fn=_cmd_calibrate)

    cmp_p = sub.add_parser("compare", help="compare finished run directories")
    cmp_p.add_argument("rundirs", nargs="+", metavar="DIR")
    cmp_p.add_argument("--assert", dest="asserts", action="append", metavar="SPEC",
                       help="e.g. 'q@0.01:0>=1', 'q@0.01:0~1@0.10', 'pmd:1>0'")
    cmp_p.set_defaults(fn=_cmd_compare)

    sweep_p = sub.add_parser("sweep", help="run a scenario across field values")
    sweep_p.add_argument("--config", metavar="PATH")
    sweep_p.add_argument("--field", required=True, metavar="NAME")
    sweep_p.add_argument("--values", required=True, metavar="V1,V2,...")
    sweep_p.add_argument("--trials", type=int, default=1000, metavar="N")
    sweep_p.add_argument("--workers", type=int, default=1, metavar="W")
    sweep_p.add_argument("--out", metavar="DIR")
    sweep_p.add_argument("--calibration", metavar="PATH")
    _add_scenario_flags(sweep_p)
    sweep_p.set_defaults(fn=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
