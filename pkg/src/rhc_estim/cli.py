"""Command-line entry point: ``rhc-estim run | validate | scenario``."""

import argparse
import os
import sys
from pathlib import Path

from .estimator import run_scenario
from .model import RegressorMode, lorenz_model
from .ocp import Weights
from .oracle import (OracleReport, direct_ocp, fd_check, field_cost, frozen_from_field,
                     frozen_scenario_horizon, lq_check, sweep_consistency)
from .output import emit_plot_script, write_manifest, write_trajectory_csv
from .scenario import BUILTIN_NAMES, ScenarioError, builtin_scenario, parse_scenario

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DEFAULT_OUT = "out"


class _Parser(argparse.ArgumentParser):
    # argparse already exits with 2 on usage errors; keep it but print the full usage
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="rhc-estim", description="Receding-horizon parameter estimation runs and checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate a scenario and write CSV, plot script and manifest")
    r.add_argument("--scenario", required=True, help="built-in name or TOML file")
    r.add_argument("--out", default=None, help="output directory (default $RHC_ESTIM_OUT or ./out)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--mode", choices=[m.value for m in RegressorMode], default=None)
    r.add_argument("--t-end", type=float, default=None, dest="t_end")

    v = sub.add_parser("validate", help="run an oracle check")
    v.add_argument("check", choices=["gradients", "lq", "sweep", "oracle"])
    v.add_argument("--samples", type=int, default=100, help="samples for the gradient check")
    v.add_argument("--csv", default=None, help="also write the report as CSV")

    s = sub.add_parser("scenario", help="inspect scenarios")
    s.add_argument("action", choices=["list"])
    return p


def cmd_run(args):
    try:
        scenario = parse_scenario(args.scenario)
    except FileNotFoundError as err:
        print(f"error: scenario file not found: {err.filename}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as err:
        print(f"error: invalid scenario: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        scenario = scenario.with_overrides(seed=args.seed, mode=args.mode, t_end=args.t_end)
    except ScenarioError as err:
        print(f"error: invalid scenario: {err}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or os.environ.get("RHC_ESTIM_OUT") or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)

    table = run_scenario(scenario)
    csv_path = out / "trajectory.csv"
    write_trajectory_csv(table, csv_path)
    plot = emit_plot_script(csv_path, out)
    write_manifest(scenario, table, out, [csv_path.name, plot.name])
    print(f"{scenario.name}: {len(table)} rows -> {csv_path}")
    if table.failure:
        print(f"error: run stopped early: {table.failure}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# the sweep relation holds up to the tau-grid truncation error (fourth order);
# a 4x finer grid puts that well below the check's tolerance
SWEEP_REFINE = 4


def _frozen_lorenz(refine=1):
    return frozen_scenario_horizon(builtin_scenario("lorenz-const"), 10.0, refine)


def cmd_validate(args):
    if args.check == "gradients":
        if args.samples < 1:
            print("error: --samples must be at least 1", file=sys.stderr)
            return EXIT_USAGE
        report = fd_check(lorenz_model(), Weights.scaled_identity(3, 2), args.samples)
    elif args.check == "lq":
        report = lq_check()
    elif args.check == "sweep":
        fld, sw, ctx = _frozen_lorenz(SWEEP_REFINE)
        report = sweep_consistency(fld, sw, ctx)
    else:
        fld, _, ctx = _frozen_lorenz()
        inst = frozen_from_field(fld, ctx)
        U, J, info = direct_ocp(inst)
        Jc = field_cost(fld, ctx.weights)
        report = OracleReport().add("direct cost vs continuation cost", abs(J - Jc) / abs(Jc), 0.01)
        report.notes.update(direct_cost=f"{J:.10g}", continuation_cost=f"{Jc:.10g}",
                            iterations=info["iterations"], grad_norm=f"{info['grad_norm']:.3e}")
    print(report.to_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_scenario(args):
    for name in BUILTIN_NAMES:
        s = builtin_scenario(name)
        noise = f"noise std {s.noise.std:g}" if s.noise is not None else "noise-free"
        print(f"{name:20s} theta {s.theta_true.kind:9s} {noise}, t_end {s.t_end:g} s")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "validate": cmd_validate, "scenario": cmd_scenario}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
