"""
Command line entry point: ``hqp-ik run | check | version``.

Exit codes: 0 success, 1 self-check mismatch, 2 config error,
3 solver failure, 4 safety violation.
"""

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Optional

from app import __version__
from app.models.reports import MetricsReport
from app.services.kinematics import ChainError, load_chain_file
from app.services.scenario import (
    ScenarioConfigError,
    apply_overrides,
    load_scenario,
    run_batch,
)
from app.services.selfcheck import check_chain
from app.utils.logger import get_structured_logger

logger = get_structured_logger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_FAILURE = 3
EXIT_SAFETY_VIOLATION = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hqp-ik",
        description="Hierarchical QP inverse kinematics for RCM-constrained surgical tools",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Simulate one or more scenarios")
    run.add_argument(
        "--scenario",
        action="append",
        required=True,
        help="Scenario file or bundled scenario name; repeat to run several",
    )
    run.add_argument("--out", type=Path, default=None, help="Output directory")
    run.add_argument("--dt", type=float, default=None, help="Override the control period (s)")
    run.add_argument("--steps", type=int, default=None, help="Override the number of steps")
    run.add_argument(
        "--disable-manipulability",
        action="store_true",
        help="Drop the manipulability level from the stack",
    )
    run.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Accepted for reproducible tooling; simulations are deterministic",
    )
    run.add_argument("--workers", type=int, default=None, help="Scenarios simulated in parallel")

    check = commands.add_parser("check", help="Finite-difference Jacobian self-test of a chain")
    check.add_argument("--chain", required=True, help="Chain file or bundled chain name")
    check.add_argument("--samples", type=int, default=20)
    check.add_argument("--seed", type=int, default=0)

    commands.add_parser("version", help="Print the version")
    return parser


def _print_report(report: MetricsReport) -> None:
    s = report.summary
    clearance = "n/a" if s.min_clearance_m is None else f"{s.min_clearance_m:.6g} m"
    print(f"[{report.scenario}] {report.status}, {report.steps} steps")
    print(f"  avg/max EE error : {s.avg_ee_err_m:.3e} / {s.max_ee_err_m:.3e} m")
    print(f"  avg/max RCM error: {s.avg_rcm_err_m:.3e} / {s.max_rcm_err_m:.3e} m")
    print(f"  avg manipulability: {s.avg_mu:.6g}")
    print(f"  min clearance    : {clearance}, max beta_a {s.max_beta_a:.3f}")
    print(f"  wall time / step : {s.wall_ms_per_step:.3f} ms")
    if report.failure:
        print(f"  failure: {report.failure}")
    for violation in report.safety.violations:
        print(f"  SAFETY: {violation}")
    if "summary" in report.files:
        print(f"  summary: {report.files['summary']}")


def cmd_run(args: argparse.Namespace) -> int:
    try:
        configs = [
            apply_overrides(
                load_scenario(name),
                dt=args.dt,
                steps=args.steps,
                disable_manipulability=args.disable_manipulability,
            )
            for name in args.scenario
        ]
    except ScenarioConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        print("config error: scenario names must be unique within one run", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    logger.info("CLI run", extra={"scenarios": names, "seed": args.seed})
    if args.out is not None and len(configs) == 1:
        configs = [configs[0].model_copy(
            update={"output": configs[0].output.model_copy(update={"directory": str(args.out)})}
        )]
        output_root = None
    else:
        output_root = args.out

    items = run_batch(configs, max_workers=args.workers, output_root=output_root)

    config_failed = solver_failed = unsafe = False
    for item in items:
        if item.error is not None:
            print(f"[{item.name}] error: {item.error}", file=sys.stderr)
            if isinstance(item.error, ScenarioConfigError):
                config_failed = True
            else:
                solver_failed = True
            continue
        assert item.report is not None
        _print_report(item.report)
        if not item.report.completed:
            solver_failed = True
        elif not item.report.safety.passed:
            unsafe = True

    if config_failed:
        return EXIT_CONFIG_ERROR
    if solver_failed:
        return EXIT_SOLVER_FAILURE
    if unsafe:
        return EXIT_SAFETY_VIOLATION
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    if args.samples < 1:
        print("config error: --samples must be >= 1", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        chain = load_chain_file(args.chain)
    except ChainError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    report = check_chain(chain, samples=args.samples, seed=args.seed)
    print(json.dumps({
        "chain": report.chain,
        "dof": chain.dof,
        "samples": report.samples,
        "seed": report.seed,
        "passed": report.passed,
        "results": {r.name: {"max_error": r.max_error, "passed": r.passed} for r in report.results},
    }, indent=2))
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "check":
        return cmd_check(args)
    print(__version__)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
