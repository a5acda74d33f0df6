"""Command-line front end: parse a config, run the experiment, write reports.

Exit codes: 0 when every applicable pass flag is true, 2 when any flag is
false, 1 on execution errors (bad config, infeasible constants, divergence).
One summary line is printed per test flag.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from mflang.config import KINDS, ConfigError, parse_config
from mflang.dynamics import DivergenceError
from mflang.experiments import InfeasibleConstantsError, emit_report, run_experiment

_OUT_ENV = "MFLANG_OUT_DIR"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mflang",
        description="Mean-field Langevin experiments: contraction rates, "
                    "propagation of chaos, Gibbs fixed points.",
    )
    sub = parser.add_subparsers(dest="kind", metavar="|".join(KINDS))
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None, help="override worker thread count")
    return parser


def _resolve_out_dir(cfg_out, flag_out) -> str:
    if flag_out:
        return flag_out
    if cfg_out:
        return cfg_out
    env = os.environ.get(_OUT_ENV)
    if env:
        return env
    return "out"


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; the contract reserves 2 for
        # pass-flag failures, so usage problems map to 1
        return 0 if exc.code == 0 else 1
    if args.kind is None:
        parser.print_usage(sys.stderr)
        return 1

    try:
        cfg = parse_config(args.config)
        if cfg.kind != args.kind:
            raise ConfigError("kind", f"config declares {cfg.kind!r} but the "
                                      f"{args.kind!r} subcommand was invoked")
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.threads is not None:
            cfg = dataclasses.replace(cfg, threads=args.threads)
        report = run_experiment(cfg)
        out_dir = _resolve_out_dir(cfg.out_dir, args.out)
        written = emit_report(report, Path(out_dir))
    except (ConfigError, InfeasibleConstantsError, DivergenceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    _print_summary(report, written)
    return 0 if report.all_pass else 2


def _print_summary(report, written):
    for name, flag in sorted(report.pass_flags.items()):
        state = "pass" if flag else ("FAIL" if flag is not None else "skipped")
        print(f"[{report.kind}] {name}: {state}")
    if report.fitted_rate is not None:
        print(f"[{report.kind}] fitted_rate={report.fitted_rate:.6g} "
              f"bound={report.theoretical_rate_bound:.6g}")
    if report.fitted_scaling_slope is not None:
        print(f"[{report.kind}] scaling_slope={report.fitted_scaling_slope:.4f}")
    if report.kind == "kinetic-constants":
        c = report.info["constants"]
        feas = c["feasible"]
        print(f"[kinetic-constants] eta={c['eta']:.9g} eta0={c['eta0']:.9g} feasible={feas}")
        if feas:
            lo, hi = c["b_window"]
            print(f"[kinetic-constants] b_window=({lo:.12g}, {hi:.12g}) b={c['b']:.9g} "
                  f"rate_C={c['rate_C']:.6g}")
    if report.kind == "fixed-point":
        info = report.info
        print(f"[fixed-point] iterations={info['iterations']} variance={info['variance']:.8g} "
              f"residual={info['stationarity_residual']:.3g}")
        if "max_ratio" in info:
            print(f"[fixed-point] max_ratio={info['max_ratio']:.6g} bound={info['ratio_bound']:.6g}")
    print(f"[{report.kind}] wrote {written['summary']}")


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
