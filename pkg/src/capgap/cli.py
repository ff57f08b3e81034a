"""Command-line driver.

Exit status: 0 success, 1 failed check or infeasible target,
2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, with_overrides, write_config
from .errors import CapGapError, ConfigurationError, DegenerateTargetError, InfeasibleTargetError
from .incircle import REPORT_COLUMNS, check_supermodular, mining_gap_profile
from .sim import run_experiment, write_aggregate_csv, write_trace_csv
from .zdengine import (
    PayoffTables,
    controllable_payoff_range,
    random_miner_policy,
    verify_linear_relation,
    zd_user_policy,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
ZD_TOLERANCE = 1e-9

log = logging.getLogger("capgap")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(cfg, seed=getattr(args, "seed", None), repeats=getattr(args, "repeats", None))


def _out_file(path: str | None):
    """Context-managed CSV target: a file when a path is given, otherwise stdout."""
    if path is None:
        return _Stdout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()
        return False


def cmd_init_config(args) -> int:
    write_config(ExperimentConfig(), args.out)
    print(f"wrote default config to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg.sim, workers=args.workers or cfg.workers)
    write_trace_csv(result.traces, out / cfg.output.trace_file)
    write_aggregate_csv(result, out / cfg.output.aggregate_file)
    s = result.summary()
    print(f"runs: {len(result.traces)}  user: {cfg.sim.user}  mode: {cfg.sim.play_mode}")
    print(f"final p_e mean: {s['final_p_e']:.4f}")
    print(f"final fee mean: {s['final_mean_fee']:.4f}")
    print(f"final start time mean: {s['final_mean_start_time']:.4f}")
    print(f"upsilon_m: {s['upsilon_m']:.4f}")
    print(f"wrote {out / cfg.output.trace_file} and {out / cfg.output.aggregate_file}")
    return EXIT_OK


def _tables(cfg: ExperimentConfig) -> PayoffTables:
    return PayoffTables.from_model(cfg.sim.model, cfg.sim.grid)


def cmd_zd_range(args) -> int:
    cfg = _load(args)
    lo, hi = controllable_payoff_range(_tables(cfg))
    with _out_file(args.out) as fh:
        w = csv.writer(fh)
        w.writerow(["e_min", "e_max"])
        w.writerow([repr(lo), repr(hi)])
    return EXIT_OK


def cmd_zd_check(args) -> int:
    cfg = _load(args)
    tables = _tables(cfg)
    try:
        q, coeffs = zd_user_policy(cfg.sim.grid, tables, args.target, cfg.sim.residual_rule)
    except (InfeasibleTargetError, DegenerateTargetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    rng = np.random.default_rng(cfg.sim.seed)
    residuals = [
        verify_linear_relation(q, coeffs, random_miner_policy(cfg.sim.grid, rng), tables)
        for _ in range(args.policies)
    ]
    with _out_file(args.out) as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "residual"])
        for k, r in enumerate(residuals):
            w.writerow([k, repr(r)])
    worst = max(residuals)
    print(
        f"target {args.target:g}: alpha={coeffs.alpha:.6g} gamma={coeffs.gamma:.6g} "
        f"max residual over {args.policies} miner policies = {worst:.3e}",
        file=sys.stderr,
    )
    return EXIT_OK if worst < ZD_TOLERANCE else EXIT_FAIL


def cmd_verify_supermodular(args) -> int:
    cfg = _load(args)
    o = cfg.incircle_options
    report = check_supermodular(cfg.incircle, o.grid_resolution, o.time_resolution)
    with _out_file(args.out) as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for row in report.rows():
            w.writerow(row)
    print(
        f"miner conditions: a {report.condition_a_holds.mean() if report.condition_a_holds.size else 1:.3f}, "
        f"b {report.condition_b_holds.mean() if report.condition_b_holds.size else 1:.3f} of points hold; "
        f"min mixed partial {report.min_mixed_partial:.3e}; "
        f"user condition holds: {report.user_conditions_hold()}, "
        f"user min mixed partial {report.user_min_mixed_partial:.3e}",
        file=sys.stderr,
    )
    if report.passes(args.side):
        return EXIT_OK
    print(f"violation: {report.first_violation(args.side)}", file=sys.stderr)
    return EXIT_FAIL


def cmd_gap_profile(args) -> int:
    cfg = _load(args)
    prof = mining_gap_profile(cfg.incircle, cfg.incircle_options.gap_resolution)
    with _out_file(args.out) as fh:
        w = csv.writer(fh)
        w.writerow(["t", "income", "cost", "in_gap"])
        for row in zip(prof.t, prof.income, prof.cost, prof.in_gap):
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), bool(row[3])])
    print(f"gap length: {prof.gap_length:.6g}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capgap", description="Mining-gap incentive game simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, out_help="output CSV path (default: stdout)"):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="TOML config (default: built-in reference setup)")
        p.add_argument("--out", help=out_help)
        p.add_argument("--seed", type=int, help="override sim.seed")
        p.set_defaults(func=func)
        return p

    p = sub.add_parser("init-config", help="write the default config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_config)

    p = add("simulate", cmd_simulate, "run repeated episodes and export CSVs",
            out_help="output directory (default: output.dir)")
    p.add_argument("--repeats", type=int, help="override sim.repeats")
    p.add_argument("--workers", type=int, help="parallel worker processes")

    add("zd-range", cmd_zd_range, "print the controllable miner payoff range")

    p = add("zd-check", cmd_zd_check, "check the ZD linear relation against random miner policies")
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--policies", type=int, default=100, help="number of random miner policies K")

    p = add("verify-supermodular", cmd_verify_supermodular, "evaluate complementarity conditions")
    p.add_argument("--side", choices=("miner", "user", "both"), default="both")

    add("gap-profile", cmd_gap_profile, "income vs. cost over one round")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except CapGapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
