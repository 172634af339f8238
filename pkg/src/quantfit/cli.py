"""Command-line front end for benchmarks, audits, optimization, and training.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 numerical
failure (audit over tolerance, diverged optimization or training).
"""

from __future__ import annotations

import argparse
import os
import sys

from . import experiments, plotting
from .agents import TrainingDivergedError
from .distributions import named_distribution
from .fractions import DivergenceError
from .quadrature import IntegrationError
from .staircase import FractionSet, optimal_values

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantfit",
        description="Staircase quantile approximation benchmarks and toy RL training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "approx": "W1 of optimized / equally spaced / random fraction schemes",
        "gradcheck": "finite-difference audits of both gradient routes",
        "optimize": "fraction descent traces on benchmark distributions",
        "train": "train one agent and record learning curves",
        "sweep": "train across agent kinds and seeds in parallel",
    }
    for name, help_text in commands.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", metavar="PATH", help="JSON experiment config")
        s.add_argument("--seed", type=int, help="replace the config seed list")
        s.add_argument("--out", metavar="DIR", help="output directory")
        s.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def _resolve_config(args) -> experiments.ExperimentConfig:
    if args.config:
        config = experiments.load_config(args.config, kind=args.command)
    else:
        config = experiments.config_from_dict({}, kind=args.command)
    if args.seed is not None:
        if args.seed < 0:
            raise ValueError("--seed must be non-negative")
        config.seeds = (int(args.seed),)
    if args.out:
        config.out_dir = args.out
    return config


def _emit(config, rows, stem: str, quiet: bool) -> tuple[str, str]:
    csv_path = experiments.write_result_csv(
        os.path.join(config.out_dir, stem + ".csv"), rows
    )
    timing_path = experiments.write_timing_csv(
        os.path.join(config.out_dir, stem + "_timing.csv"), rows
    )
    if not quiet:
        print(f"wrote {csv_path} ({len(rows)} rows)")
    return csv_path, timing_path


def _say(quiet: bool, message: str) -> None:
    if not quiet:
        print(message)


def _cmd_approx(config, quiet: bool) -> int:
    rows = experiments.run_approx(config)
    _emit(config, rows, "approx", quiet)
    fig = plotting.w1_bars(rows, os.path.join(config.out_dir, "approx.png"))
    _say(quiet, f"wrote {fig}")
    return EXIT_OK


def _cmd_gradcheck(config, quiet: bool) -> int:
    rows, worst = experiments.run_gradcheck(config)
    _emit(config, rows, "gradcheck", quiet)
    fig = plotting.rel_err_histogram(
        rows, os.path.join(config.out_dir, "gradcheck.png"), experiments.GRADCHECK_TOL
    )
    _say(quiet, f"wrote {fig}")
    if worst >= experiments.GRADCHECK_TOL:
        print(f"gradcheck failed: worst relative error {worst:.3e}", file=sys.stderr)
        return EXIT_NUMERICAL
    _say(quiet, f"gradcheck passed: worst relative error {worst:.3e}")
    return EXIT_OK


def _final_fractions(rows, exp_id: str, seed: int, final_step: int):
    taus = sorted(
        (int(r.metric.rsplit("_", 1)[-1]), r.value)
        for r in rows
        if r.experiment == exp_id and r.seed == seed
        and r.step == final_step and r.metric.startswith("tau_")
    )
    return FractionSet(tuple(v for _, v in taus))


def _cmd_optimize(config, quiet: bool) -> int:
    rows = experiments.run_optimize(config)
    _emit(config, rows, "optimize", quiet)
    fig = plotting.optimize_traces(rows, os.path.join(config.out_dir, "optimize.png"))
    _say(quiet, f"wrote {fig}")
    # one staircase overlay per cell, at the first seed
    seed = config.seeds[0]
    for name in config.distributions:
        qf = named_distribution(name)
        for n in config.n_values:
            fr = _final_fractions(rows, f"optimize/{name}/N{n}", seed, config.optimize_steps)
            path = os.path.join(config.out_dir, f"optimize_{name}_N{n}.png")
            plotting.staircase_overlay(
                qf, {"optimized": optimal_values(qf, fr)}, path, title=f"{name}, N={n}"
            )
            _say(quiet, f"wrote {path}")
    return EXIT_OK


def _check_diverged(rows) -> int:
    if any(r.metric == "diverged" for r in rows):
        print("training diverged; see the diagnostics row", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_train(config, quiet: bool) -> int:
    rows = []
    for seed in config.seeds:
        seed_rows, ckpt = experiments.run_train(config, seed)
        rows.extend(seed_rows)
        if ckpt:
            _say(quiet, f"wrote {ckpt}")
    _emit(config, rows, "train", quiet)
    fig = plotting.learning_curves(rows, os.path.join(config.out_dir, "train.png"))
    _say(quiet, f"wrote {fig}")
    return _check_diverged(rows)


def _cmd_sweep(config, quiet: bool) -> int:
    rows = experiments.run_sweep(config)
    path = experiments.write_result_csv(os.path.join(config.out_dir, "sweep.csv"), rows)
    _say(quiet, f"wrote {path} ({len(rows)} rows)")
    fig = plotting.learning_curves(rows, os.path.join(config.out_dir, "sweep.png"))
    _say(quiet, f"wrote {fig}")
    return _check_diverged(rows)


_COMMANDS = {
    "approx": _cmd_approx,
    "gradcheck": _cmd_gradcheck,
    "optimize": _cmd_optimize,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits by itself on bad flags; fold into the config code
        code = exc.code if isinstance(exc.code, int) else 1
        return EXIT_OK if code == 0 else EXIT_CONFIG

    try:
        config = _resolve_config(args)
        os.makedirs(config.out_dir, exist_ok=True)
    except (ValueError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return _COMMANDS[args.command](config, args.quiet)
    except (ValueError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, DivergenceError, TrainingDivergedError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
