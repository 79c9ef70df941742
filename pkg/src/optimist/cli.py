"""Command-line front end: ``optimist simulate | test | ci | experiment | designs``."""
from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, bundled_plans, load_plan, load_run_config
from .core import ConfigError, DataError, SeedSpec, SimulationError, read_trajectory_csv, write_trajectory_csv
from .designs import design_catalog, make_design
from .harness import GridSpec, run_experiment
from .inference import BIAS_DOC, BIAS_KINDS, confidence_interval, test_point_null
from .simulator import ArmModel, NullSpec, parse_target, run_true_experiment

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ACCEPTANCE = 0, 2, 3, 4


def _epilog() -> str:
    lines = ["designs:"]
    lines += [f"  {t.name:<20} {t.description}" for t in design_catalog()]
    lines += ["", "bias kinds:"]
    lines += [f"  {b:<20} {BIAS_DOC[b]}" for b in BIAS_KINDS]
    lines += ["", "exit codes: 0 ok, 2 config error, 3 data error, 4 acceptance failure",
              "environment: OPTIMIST_WORKERS sets the worker count when --workers is not given"]
    return "\n".join(lines)


def _param(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _grid_arg(text: str) -> tuple[float, float, int]:
    try:
        lo, hi, n = text.split(":")
        return float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:count, got {text!r}") from None


def _common(p: argparse.ArgumentParser, design: bool = True):
    p.add_argument("--config", help="run config file (INI sections [design], [target], [inference], [grid], [run])")
    p.add_argument("--seed", type=int, help="master seed; sampled and printed when omitted")
    p.add_argument("--workers", type=int, help="worker processes (default: OPTIMIST_WORKERS, config, then 1)")
    if design:
        p.add_argument("--design", help="catalog design name or design kind")
        p.add_argument("--param", action="append", type=_param, default=[], metavar="KEY=VALUE",
                       help="design parameter override, repeatable (base.KEY for a wrapper's base design)")
        p.add_argument("--K", type=int, help="number of arms")


def _inference_args(p: argparse.ArgumentParser):
    p.add_argument("data", help="trajectory CSV (t,arm,outcome)")
    p.add_argument("--target", help="arm:<a> or diff:<a>,<b> (default arm:1)")
    p.add_argument("--alpha", type=float, help="test level (default 0.1)")
    p.add_argument("--B", type=int, help="simulations per null (default 200)")
    p.add_argument("--bias", choices=BIAS_KINDS, help="optimistic bias kind (default bias1)")
    p.add_argument("--out", help="also write the JSON result to this path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optimist",
        description="Simulation-with-optimism inference for adaptively collected bandit data.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", help="run a design against a true arm model and write a trajectory CSV",
                       epilog=_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    p.add_argument("--T", type=int, help="horizon")
    p.add_argument("--arms", help="true arm model, e.g. bernoulli:0.5,0.5 or gaussian:0,0/1,1")
    p.add_argument("--out", default="trajectory.csv", help="output CSV path; a .manifest.json is written beside it")

    p = sub.add_parser("test", help="test a point null theta = theta0",
                       epilog=_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    _inference_args(p)
    p.add_argument("--theta0", type=float, help="null value")

    p = sub.add_parser("ci", help="confidence set by test inversion over a grid of nulls",
                       epilog=_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(p)
    _inference_args(p)
    p.add_argument("--grid", type=_grid_arg, metavar="LO:HI:COUNT",
                   help="null grid (default 0:1:100, or -1:1:201 for a difference)")
    p.add_argument("--grid-values", help="explicit comma-separated null values")
    p.add_argument("--independent-streams", action="store_true",
                   help="give each null its own replicate streams instead of sharing them")

    p = sub.add_parser("experiment", help="run an experiment plan and write results/<plan>/<timestamp>/",
                       epilog="bundled plans: " + ", ".join(sorted(bundled_plans())),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("plan", help="plan file path or bundled plan name")
    p.add_argument("--seed", type=int, help="override the plan's master seed")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--replications", type=int, help="override the plan's replication count")
    p.add_argument("--out-root", default="results", help="results root directory (default: results)")

    sub.add_parser("designs", help="list catalog designs and bias kinds")
    return parser


# -- helpers ---------------------------------------------------------------------


def _resolve_seed(seed: int | None) -> int:
    if seed is None:
        seed = secrets.randbits(63)
        print(f"seed: {seed}", file=sys.stderr)
    return seed


def _merge(args, need=()) -> RunConfig:
    rc = load_run_config(getattr(args, "config", None))
    if getattr(args, "design", None):
        rc.design = args.design
    params = dict(rc.design_params)
    params.update(dict(getattr(args, "param", []) or []))
    rc.design_params = params
    for name in ("K", "alpha", "B", "bias", "theta0", "T", "seed", "workers"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(rc, name, v)
    if getattr(args, "target", None):
        rc.target = parse_target(args.target)
    if getattr(args, "arms", None):
        rc.arms = ArmModel.parse(args.arms)
    if getattr(args, "grid", None):
        rc.grid_values = None
        rc.grid = GridSpec(*args.grid)
    if getattr(args, "grid_values", None):
        try:
            rc.grid_values = tuple(float(v) for v in args.grid_values.split(","))
        except ValueError:
            raise ConfigError(f"grid-values: cannot parse {args.grid_values!r}") from None
        rc.grid = None
    if getattr(args, "independent_streams", False):
        rc.common_random_numbers = False
    if args.workers is None:
        # flag > environment > config
        if os.environ.get("OPTIMIST_WORKERS"):
            try:
                rc.workers = int(os.environ["OPTIMIST_WORKERS"])
            except ValueError:
                raise ConfigError(f"OPTIMIST_WORKERS: not an integer: {os.environ['OPTIMIST_WORKERS']!r}") from None
    rc.validate(need)
    rc.seed = _resolve_seed(rc.seed)
    return rc


def _emit(payload: dict, out: str | None):
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if out:
        try:
            Path(out).parent.mkdir(parents=True, exist_ok=True)
            Path(out).write_text(text + "\n", encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {out}: {exc}") from exc


def _load_data(rc: RunConfig, path: str):
    h = read_trajectory_csv(path, K=rc.K)
    K = rc.K or h.K
    rc.target.check(K)
    design = make_design(rc.design, K, h.T, **rc.design_params)
    return h, design


# -- subcommands --------------------------------------------------------------------


def cmd_simulate(args) -> int:
    rc = _merge(args, need=("design", "T", "arms"))
    design = make_design(rc.design, rc.arms.K, rc.T, **rc.design_params)
    h = run_true_experiment(design, rc.arms, rc.T, SeedSpec(rc.seed))
    out = Path(args.out)
    write_trajectory_csv(h, out)
    manifest = {"version": __version__, "command": "simulate", "seed": rc.seed, "T": rc.T,
                "arms": str(rc.arms), "design": design.to_config()}
    mpath = out.with_name(out.name + ".manifest.json")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out} ({h.T} rows) and {mpath}", file=sys.stderr)
    return EXIT_OK


def cmd_test(args) -> int:
    rc = _merge(args, need=("design", "theta0"))
    h, design = _load_data(rc, args.data)
    res = test_point_null(h, design, NullSpec(rc.target, rc.theta0), rc.alpha, rc.B, rc.bias,
                          SeedSpec(rc.seed), rc.workers)
    payload = res.to_json()
    payload.update({"seed": rc.seed, "bias": rc.bias, "B": rc.B, "target": str(rc.target),
                    "design": design.to_config()})
    _emit(payload, args.out)
    return EXIT_OK


def cmd_ci(args) -> int:
    rc = _merge(args, need=("design",))
    h, design = _load_data(rc, args.data)
    if rc.grid_values is not None:
        grid = np.array(rc.grid_values)
    elif rc.grid is not None:
        grid = rc.grid.values()
    else:
        grid = None
    res = confidence_interval(h, design, rc.target, rc.alpha, grid, rc.B, rc.bias, SeedSpec(rc.seed),
                              rc.workers, rc.common_random_numbers)
    payload = res.to_json()
    payload.update({"seed": rc.seed, "target": str(rc.target), "design": design.to_config(),
                    "common_random_numbers": rc.common_random_numbers})
    _emit(payload, args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    plan = load_plan(args.plan)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replications is not None:
        overrides["R"] = args.replications
    if overrides:
        plan = replace(plan, **overrides)
    print(f"plan {plan.name} ({plan.kind}), seed {plan.seed}, hash {plan.plan_hash()}", file=sys.stderr)
    res = run_experiment(plan, workers=args.workers, out_root=args.out_root)
    for c in res.checks:
        print(c.line())
    print(f"results: {res.out_dir}")
    if not res.passed:
        failed = sum(not c.passed for c in res.checks)
        print(f"{failed} of {len(res.checks)} threshold checks failed", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_designs(args) -> int:
    print(_epilog())
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "test": cmd_test, "ci": cmd_ci, "experiment": cmd_experiment,
            "designs": cmd_designs}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SimulationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
