"""Experiment command line: ``lmm-adjoint <experiment> --config <path>``.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import (EXPERIMENT_KINDS, Config, ConfigError,
                     config_reference_text, load_config)
from .experiments import (run_control, run_ode_convergence, run_relax_adjoint,
                          run_relax_forward)
from .ode_control import SingularAdjointStepError, SolverBlowUpError
from .relaxation import FieldBlowUpError, ModelConfigError
from .tableaus import ImplicitSolveError, UnknownTableauError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

_CONFIG_ERRORS = (ConfigError, UnknownTableauError, ModelConfigError,
                  ValueError)
_SOLVER_ERRORS = (ImplicitSolveError, SolverBlowUpError, FieldBlowUpError,
                  SingularAdjointStepError, FloatingPointError,
                  ArithmeticError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmm-adjoint",
        description="Multistep adjoint experiments: convergence tables, "
                    "relaxation runs, and initial-data control loops.",
        epilog="Run 'lmm-adjoint config-reference' for all config keys.")
    parser.add_argument("experiment",
                        choices=list(EXPERIMENT_KINDS) + ["config-reference"],
                        help="experiment kind (or config-reference to print "
                             "the key documentation)")
    parser.add_argument("--config", help="path to a flat key = value file")
    parser.add_argument("--out", default=".",
                        help="output directory for CSV artifacts (default .)")
    parser.add_argument("--route", choices=("dto", "otd", "both"),
                        default="both",
                        help="adjoint route(s) for convergence tables")
    parser.add_argument("--am-denominator", type=int, choices=(270, 720),
                        default=720,
                        help="Adams-Moulton(4) coefficient denominator "
                             "(720 = consistent, 270 = printed variant)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.experiment == "config-reference":
        print(config_reference_text())
        return EXIT_OK
    try:
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = Config()
        if cfg.kind is not None and cfg.kind != args.experiment:
            raise ConfigError(
                f"config file is for {cfg.kind!r}, not {args.experiment!r}")
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.experiment == "ode-converge":
            run_ode_convergence(cfg, args.out, route=args.route,
                                am_denominator=args.am_denominator)
        elif args.experiment == "relax-forward":
            run_relax_forward(cfg, args.out)
        elif args.experiment == "relax-adjoint":
            run_relax_adjoint(cfg, args.out)
        else:
            run_control(cfg, args.out, args.experiment)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
