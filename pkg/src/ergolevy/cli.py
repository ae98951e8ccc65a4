"""Command-line interface.

Subcommands:

* ``plan``    print the resolved schedule recipe for the configured run
* ``moments`` print measure masses and moments at a few thresholds
* ``run``     execute the configured experiment; emit CSV and SVG artifacts
* ``guard``   evaluate the jump-complexity budget over the run horizon

All subcommands read the same INI config (see README).  Exit codes: 0 on
success, 2 for configuration problems (including infeasible schedules and
guard violations), 3 when the divergence tolerance is exceeded, 4 for I/O
failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys

import numpy as np

from .harness import (
    ConfigError,
    ExperimentConfig,
    ExperimentFailedError,
    emit_csv,
    emit_svg_plot,
    run_experiment,
)
from .rates import classify_regime, h_of_zeta
from .scheme import DivergenceError, complexity_guard

__all__ = ["main"]


def _parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, metavar="PATH", help="INI config file")
    shared.add_argument("--seed", type=int, metavar="N", help="override master seed")
    shared.add_argument("--out", metavar="DIR", help="directory for output artifacts")
    shared.add_argument("--replicas", type=int, metavar="N", help="override replica count")
    shared.add_argument("--steps", type=int, metavar="N", help="override step count")
    shared.add_argument("--threads", type=int, metavar="N", help="override worker count")

    parser = argparse.ArgumentParser(
        prog="ergolevy",
        description="Invariant-distribution approximation for Levy-driven SDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", parents=[shared], help="print the resolved schedule").set_defaults(
        func=_cmd_plan
    )
    sub.add_parser("moments", parents=[shared], help="print measure moments").set_defaults(
        func=_cmd_moments
    )
    sub.add_parser("run", parents=[shared], help="run the experiment").set_defaults(
        func=_cmd_run
    )
    sub.add_parser("guard", parents=[shared], help="check the jump budget").set_defaults(
        func=_cmd_guard
    )
    return parser


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_ini(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replicas is not None:
        overrides["replicas"] = args.replicas
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        config = dataclasses.replace(
            config,
            seed=overrides.get("seed", config.seed),
            replicas=overrides.get("replicas", config.replicas),
            n_steps=overrides.get("steps", config.n_steps),
            threads=overrides.get("threads", config.threads),
        )
    return config.resolve()


def _cmd_plan(args) -> int:
    config = _load_config(args)
    exponent = config.plan_exponent
    regime = config.plan_regime
    if exponent is None:
        exponent = h_of_zeta(config.zeta).exponent
        regime, _ = classify_regime(config.zeta, config.gamma1)
    print(f"plan.scheme = {config.scheme_kind}")
    print(f"plan.mode = {config.schedule_mode}")
    print(f"plan.gamma1 = {config.gamma1!r}")
    print(f"plan.zeta = {config.zeta!r}")
    print(f"plan.r_threshold = {config.r_threshold!r}")
    print(f"plan.s_order = {'auto' if config.s_order is None else config.s_order}")
    print(f"plan.u_cap = {'none' if config.u_cap is None else repr(config.u_cap)}")
    print(f"plan.exponent = {exponent!r}")
    print(f"plan.regime = {regime}")
    print(f"plan.n_steps = {config.n_steps}")
    return 0


def _cmd_moments(args) -> int:
    config = _load_config(args)
    measure = config.build_measure()
    thresholds = (0.01, 0.1, 0.5, 1.0)
    print(f"measure = {measure!r}")
    print(f"m2 = {measure.abs_moment(2)!r}")
    try:
        print(f"m4 = {measure.abs_moment(4)!r}")
    except ValueError:
        print("m4 = divergent")
    for u in thresholds:
        lam = measure.tail_mass(u)
        trunc = measure.truncated_abs_moment(2, u)
        drift = float(np.linalg.norm(measure.compensator_drift(u)))
        trace = float(np.trace(measure.small_jump_cov(u)))
        print(
            f"u = {u}: tail_mass = {lam!r}, trunc_m2 = {trunc!r}, "
            f"|compensator| = {drift!r}, cov_trace = {trace!r}"
        )
    return 0


def _artifact_path(configured: str | None, out_dir: str | None, default_name: str) -> str | None:
    if out_dir is None:
        return configured
    name = os.path.basename(configured) if configured else default_name
    return os.path.join(out_dir, name)


def _cmd_run(args) -> int:
    config = _load_config(args)
    aggregate = run_experiment(config)
    csv_path = _artifact_path(config.csv_path, args.out, "run.csv")
    svg_path = _artifact_path(config.svg_path, args.out, "run.svg") if (
        config.svg_path or (args.out and config.targets)
    ) else None
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
    if csv_path:
        emit_csv(aggregate, csv_path)
        print(f"wrote {csv_path}")
    if svg_path:
        fid = next(iter(config.targets), config.function_ids[0])
        emit_svg_plot(aggregate, svg_path, fid=fid)
        print(f"wrote {svg_path}")
    n_final = int(aggregate.ns[-1])
    for fid in aggregate.fids:
        mean = aggregate.mean_nu(fid)[-1]
        se = aggregate.se_nu(fid)[-1]
        line = f"n = {n_final}: nu_hat[{fid}] = {mean:.6g}"
        if math.isfinite(se):
            line += f" (se {se:.3g})"
        if fid in aggregate.targets:
            line += f", err = {mean - aggregate.targets[fid]:+.6g}"
        print(line)
    if aggregate.failures:
        for failure in aggregate.failures:
            print(
                f"replica {failure.replica} diverged at step {failure.step} "
                f"(|x| = {failure.norm:.3g})"
            )
    print(f"replicas = {len(aggregate.replicas)} ok, {len(aggregate.failures)} failed")
    return 0


def _cmd_guard(args) -> int:
    config = _load_config(args)
    measure = config.build_measure()
    schedule = config.build_schedule()
    report = complexity_guard(schedule, measure, horizon=config.n_steps)
    print(f"guard.horizon = {config.n_steps}")
    print(f"guard.lam1_gamma1 = {report.lam1_gamma1!r}")
    print(f"guard.sup_lam_gamma = {report.sup_lam_gamma!r}")
    print(f"guard.argmax_k = {report.argmax_k}")
    print(f"guard.bound = {report.bound!r}")
    print(f"guard.violated = {report.violated}")
    if report.violated:
        print("error: complexity guard violated", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExperimentFailedError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
