"""Batch command line interface.

Subcommands:
    validate-noise       check the growth conditions of a noise family
    project-rates        convergence of the discrete projections
    deterministic-rates  unforced vortex rates in time and space
    stochastic-rates     coupled-path Monte Carlo rate experiment
    replay               re-run an emitted echo file bit for bit
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness, kernels
from .noise import make_default_family, validate_conditions


def _parse_levels(text: str):
    return tuple(tuple(int(p) for p in item.split(":"))
                 for item in text.split(",") if item)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--outdir", default="results",
                        help="directory for emitted tables")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed override")
    parser.add_argument("--workers", type=int, default=None,
                        help="process count for path-level parallelism")


def _cmd_validate_noise(args) -> int:
    model = make_default_family(args.decay, args.scale, args.mode,
                                args.modes, _allow_unstable=True)
    report = validate_conditions(model,
                                 include_second_order=args.second_order)
    print(report)
    return 0 if report.passed else 1


def _cmd_project_rates(args) -> int:
    meshes = tuple(int(n) for n in args.meshes.split(","))
    study = harness.projection_rate_study(meshes)
    path = harness.write_projection_study(study, args.outdir)
    for r in study["rows"]:
        print(f"n={r['n']:4d} velocity L2 {r['velocity_l2']:.4e} "
              f"H1 {r['velocity_h1']:.4e} pressure L2 {r['pressure_l2']:.4e}")
    for key, fit in study["fits"].items():
        print(f"slope {key}: {fit.slope:.3f} (r^2 {fit.r_squared:.5f})")
    print(f"wrote {path}")
    return 0


def _deterministic_config(args, levels, reference):
    return harness.ExperimentConfig(
        levels=levels, reference=reference, num_paths=1,
        master_seed=args.seed if args.seed is not None else 0,
        mu=args.mu, horizon=args.horizon,
        convection_form=args.form, reference_kind="exact_taylor_green",
        noise_scale=0.0, initial_kind="taylor_green",
        initial_amplitude=args.amplitude, monitor_pressure=False,
        workers=args.workers or 0)


def _cmd_deterministic_rates(args) -> int:
    steps = [int(m) for m in args.steps.split(",")]
    smeshes = [int(n) for n in args.spatial_meshes.split(",")]
    temporal = _deterministic_config(
        args, tuple((args.mesh, m) for m in steps),
        (args.mesh, max(steps)))
    spatial = _deterministic_config(
        args, tuple((n, args.spatial_steps) for n in smeshes),
        (max(smeshes), args.spatial_steps))
    code = 0
    for name, config in (("temporal", temporal), ("spatial", spatial)):
        report = harness.run_convergence_experiment(config)
        outdir = f"{args.outdir}/{name}"
        harness.emit_outputs(report, outdir)
        key = "norm_error_vs_dt" if name == "temporal" else "norm_error_vs_h"
        fit = report.fits.get(key)
        if fit is None:
            print(f"{name}: no usable rate fit")
            code = 1
            continue
        print(f"{name}: norm-rate slope {fit.slope:.3f} "
              f"(r^2 {fit.r_squared:.5f}), outputs in {outdir}")
    return code


def _cmd_stochastic_rates(args) -> int:
    if args.config:
        with open(args.config, "r", encoding="ascii") as f:
            config = harness.config_from_text(f.read())
    else:
        config = harness.ExperimentConfig(
            levels=_parse_levels(args.levels),
            reference=_parse_levels(args.reference)[0])
    overrides = {}
    if args.paths is not None:
        overrides["num_paths"] = args.paths
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.eps is not None:
        overrides["eps"] = args.eps
    if args.form is not None:
        overrides["convection_form"] = args.form
    if args.noise_scale is not None:
        overrides["noise_scale"] = args.noise_scale
    if args.noise_mode is not None:
        overrides["noise_mode"] = args.noise_mode
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    report = harness.run_convergence_experiment(config)
    written = harness.emit_outputs(report, args.outdir)
    for w in report.warnings:
        print(f"warning: {w}")
    for idx, s in enumerate(report.levels):
        print(f"level {idx} (n={s.n}, M={s.num_steps}): truncated "
              f"E[error^2] = {s.truncated_expectation:.6e} "
              f"+- {s.truncated_stderr:.2e}, acceptance "
              f"{s.acceptance_fraction:.3f}")
    for key, fit in report.fits.items():
        print(f"slope {key}: {fit.slope:.3f} (r^2 {fit.r_squared:.5f})")
    print(f"outputs in {written['echo']}")
    return 0


def _cmd_replay(args) -> int:
    report = harness.replay(args.echo, args.outdir)
    print(f"replayed {len(report.rows)} rows into {args.outdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sns2d",
        description="Stochastic Navier-Stokes convergence experiments on "
                    "the periodic torus")
    parser.add_argument("--kernel-backend", choices=("numba", "numpy"),
                        default=None, help="force a kernel backend")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-noise", help="check noise growth conditions")
    p.add_argument("--mode", default="additive",
                   choices=("additive", "linear_mult", "nonlinear_mult"))
    p.add_argument("--decay", "-s", type=float, default=2.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--modes", type=int, default=16)
    p.add_argument("--second-order", action="store_true")
    p.set_defaults(func=_cmd_validate_noise)

    p = sub.add_parser("project-rates", help="discrete projection rates")
    p.add_argument("--meshes", default="8,16,32,64")
    _add_common(p)
    p.set_defaults(func=_cmd_project_rates)

    p = sub.add_parser("deterministic-rates",
                       help="unforced vortex rates in time and space")
    p.add_argument("--mesh", type=int, default=64)
    p.add_argument("--steps", default="8,16,32,64")
    p.add_argument("--spatial-meshes", default="8,16,32")
    p.add_argument("--spatial-steps", type=int, default=64)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--horizon", type=float, default=0.5)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--form", default="skew",
                   choices=("skew", "paper_literal"))
    _add_common(p)
    p.set_defaults(func=_cmd_deterministic_rates)

    p = sub.add_parser("stochastic-rates",
                       help="coupled-path Monte Carlo rate experiment")
    p.add_argument("--config", default=None,
                   help="flat key=value configuration file")
    p.add_argument("--levels", default="32:16,32:32,32:64")
    p.add_argument("--reference", default="32:512")
    p.add_argument("--paths", type=int, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--form", default=None, choices=("skew", "paper_literal"))
    p.add_argument("--noise-scale", type=float, default=None)
    p.add_argument("--noise-mode", default=None,
                   choices=("additive", "linear_mult", "nonlinear_mult"))
    _add_common(p)
    p.set_defaults(func=_cmd_stochastic_rates)

    p = sub.add_parser("replay", help="re-run an emitted echo file")
    p.add_argument("echo", help="path to an echo.cfg file")
    _add_common(p)
    p.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.kernel_backend is not None:
        kernels.set_backend(args.kernel_backend)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
