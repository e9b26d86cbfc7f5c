"""Command line front end.

    piezoctrl <experiment> --config <file> [--out DIR] [--mesh M]
              [--degree K] [--steps N] [--alpha A] [--full-scale]

Experiments: convergence, control, simulation, verify. Exit codes:
0 success, 1 verification failure, 2 config error.
"""

import argparse
import sys

from .harness import (
    ConfigError,
    make_config,
    parse_config_file,
    run_control_study,
    run_convergence_study,
    run_simulation,
    run_verification,
)

_EXPERIMENTS = ("convergence", "control", "simulation", "verify")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="piezoctrl",
        description="Boundary-flux control of piezoelectric elastodynamics",
    )
    parser.add_argument("experiment", choices=_EXPERIMENTS)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--mesh", type=int, help="cube subdivisions per edge")
    parser.add_argument("--degree", type=int, help="polynomial degree")
    parser.add_argument("--steps", type=int, help="number of time steps")
    parser.add_argument("--alpha", type=float, help="control penalty weight")
    parser.add_argument(
        "--full-scale",
        action="store_true",
        help="run the simulation at its published size (much slower)",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"experiment": args.experiment}
    try:
        if args.config:
            overrides.update(parse_config_file(args.config))
        if args.out:
            overrides["outdir"] = args.out
        if args.mesh is not None:
            overrides["mesh_m"] = args.mesh
        if args.degree is not None:
            overrides["degree"] = args.degree
        if args.steps is not None:
            overrides["steps"] = args.steps
        if args.alpha is not None:
            overrides["alpha"] = args.alpha
        if args.full_scale:
            overrides["full_scale"] = True
        cfg = make_config(overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.experiment == "convergence":
        result = run_convergence_study(cfg)
        for row, rate in zip(result["rows"][1:], result["rates"]):
            print(
                f"M={row[0]}: u errors {row[2]:.3e} (L2) {row[3]:.3e} (H1), "
                f"orders {rate[0]:.2f}/{rate[1]:.2f}"
            )
    elif args.experiment == "control":
        result = run_control_study(cfg)
        for res in result["results"]:
            print(
                f"M={res['M']}: {res['iterations']} iterations, "
                f"j_fd={res['j_fd']:.6e}"
            )
    elif args.experiment == "simulation":
        result = run_simulation(cfg)
        print(
            f"misfit with optimal control {result['misfit_optimal']:.6e} "
            f"vs zero control {result['misfit_zero_control']:.6e}"
        )
    else:
        report = run_verification(cfg)
        if not report["passed"]:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
