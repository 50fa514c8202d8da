#!/usr/bin/env python3
"""Optimal protection switching for the cyber-epidemic SIRS model.

Commands:
    solve     Solve the switching system on a grid, or train the networks
    simulate  Simulate one or many paths, controlled or uncontrolled
    evaluate  Monte Carlo cost of one or more policies (common random numbers)
    check     Seed sweeps reproducing the qualitative scenario behaviour

Usage:
    python run_switching.py <command> (--config FILE | --scenario NAME) [options]

Example:
    python run_switching.py solve --scenario 1 --n 64 --out runs/s1
    python run_switching.py simulate --scenario 1 --value-source runs/s1/field.csv
    python run_switching.py evaluate --scenario 1 --value-source runs/s1/field.csv \\
        --policy optimal --policy never --paths 10000
    python run_switching.py simulate --config config/scenario2.cfg --paths 1000

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import sys
import time
from collections import Counter
from pathlib import Path
from typing import Optional

import numpy as np

from artifacts import (
    load_value_source,
    read_field_csv,
    save_checkpoint,
    write_aggregate_csv,
    write_comparison_csv,
    write_controlled_log,
    write_field_csv,
    write_loss_trace,
    write_manifest,
    write_mc_summary,
    write_path_summary_csv,
    write_region_csv,
    write_residuals_csv,
    write_switch_log,
    write_trajectory_csv,
)
from charts import render_region_chart, render_trajectory_chart
from config_service import ConfigService, RunConfig, parse_config_text, render_config
from console_utils import print_error, print_header, print_info, print_success, print_warning
from dgm import DgmConfig, pde_residual_batch, train
from env_config import DEFAULT_RUNS_DIR, runtime_info
from log_manager import LogCapture
from mc_value import compare_policies, efficacy_ratio, terminal_infection_stats
from model import (
    ALL_REGIMES,
    ConfigError,
    ParamsMismatchError,
    SwitchingError,
    never_switch_bound,
)
from policy import (
    OptimalSwitchingPolicy,
    all_switching_regions,
    policy_from_name,
    simulate_controlled,
)
from sde import simulate, simulate_paths
from switching_constants import (
    CROSS_SCHEMES,
    DEFAULT_GRID_N,
    DGM_LEARNING_RATE,
    DGM_STEPS,
    MC_HORIZON,
    PSOR_MAX_SWEEPS,
    PSOR_OMEGA,
    PSOR_TOL,
)
from value_source import GridValueSource, check_params_hash
from vi_grid import Grid, PsorOptions, lipschitz_estimate, residual_report, solve_psor

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

CHECK_GRID_N = 32


# =============================================================================
# Shared helpers
# =============================================================================

def load_run_config(args) -> RunConfig:
    """Run config from --config or --scenario.

    Raises:
        ConfigError: Neither or both given, unknown preset, invalid file
    """
    scenario = getattr(args, "scenario", None)
    if scenario == "custom":
        scenario = None
        if args.config is None:
            raise ConfigError("--scenario custom needs --config FILE")
    if args.config is not None and scenario is not None:
        raise ConfigError("use either --config or --scenario, not both")
    if args.config is not None:
        return ConfigService(args.config).config
    if scenario is not None:
        return ConfigService.from_preset(scenario).config
    raise ConfigError("a run config is required (--config FILE or --scenario NAME)")


def _run_label(args) -> str:
    if args.config is not None:
        return Path(args.config).stem
    return f"scenario{args.scenario}" if str(args.scenario).isdigit() else str(args.scenario)


def output_dir(args) -> Path:
    if args.out is not None:
        return Path(args.out)
    return DEFAULT_RUNS_DIR / f"{args.command}_{_run_label(args)}"


def base_manifest(args, run: RunConfig, argv: list[str]) -> dict:
    """Manifest entries shared by every command: flags, config echo, runtime."""
    entries = {"command": args.command, "argv": " ".join(argv)}
    for key, value in sorted(vars(args).items()):
        if key not in ("command", "handler"):
            entries[f"flag.{key}"] = value
    entries["params_hash"] = run.params_hash
    entries["config_source"] = run.source
    for key, (value, _) in parse_config_text(render_config(run)).items():
        entries[f"config.{key}"] = value
    entries.update({f"runtime.{k}": v for k, v in runtime_info().items()})
    return entries


def write_run_config(out_dir: Path, run: RunConfig) -> Path:
    path = out_dir / "run_config.cfg"
    path.write_text(render_config(run), encoding="utf-8")
    return path


def load_checked_source(path: Optional[Path], run: RunConfig):
    if path is None:
        return None
    source = load_value_source(path)
    check_params_hash(source, run.params_hash)
    return source


def _owner_pattern(trajectory) -> str:
    switches = trajectory.protection_switches
    start = switches[0].from_level if switches else int(trajectory.p[0])
    levels = [start] + [e.to_level for e in switches]
    return "→".join(str(level) for level in levels)


# =============================================================================
# solve
# =============================================================================

def cmd_solve(args, run: RunConfig, out_dir: Path, manifest: dict) -> int:
    print_header(f"Solve ({args.solver}) - {run.source}")
    start = time.perf_counter()

    if args.solver == "grid":
        grid = Grid(args.n)
        options = PsorOptions(
            tol=args.tol,
            max_sweeps=args.max_sweeps,
            omega=args.omega,
            coupling_lambda=args.coupling_lambda,
            cross_scheme=args.cross_scheme,
            warm_start=read_field_csv(args.warm_start) if args.warm_start else None,
            verbose=not args.quiet,
        )
        field = solve_psor(grid, run.params, run.costs, options)
        report = residual_report(field, grid, run.params, run.costs)

        write_field_csv(out_dir / "field.csv", field)
        write_residuals_csv(out_dir / "residuals.csv", report, grid)
        masks = all_switching_regions(GridValueSource(field), run.costs, grid)
        write_region_csv(out_dir / "regions.csv", masks)
        render_region_chart(out_dir / "regions.svg", out_dir / "regions.csv",
                            title=f"Switching regions ({run.source})")

        bound = never_switch_bound(run.params) + run.costs.max_constant()
        top = float(field.values[:, grid.mask()].max())
        if top > bound:
            print_warning(f"max value {top:.6g} exceeds the never-switch bound {bound:.6g}")

        manifest.update({f"result.{k}": v for k, v in report.summary().items()})
        manifest["result.sweeps"] = field.metadata["sweeps"]
        manifest["result.max_value"] = top
        manifest["result.max_lipschitz"] = max(lipschitz_estimate(field, grid).values())
        print_success(f"converged in {field.metadata['sweeps']} sweeps, "
                      f"complementarity {report.max_complementarity:.3e}")
    else:
        config = DgmConfig(
            steps=args.steps,
            penalty_weight=args.penalty,
            seed=run.seed if args.seed is None else args.seed,
            optimizer=args.optimizer,
            learning_rate=args.learning_rate,
            verbose=not args.quiet,
        )
        result = train(config, run.params, run.costs)
        save_checkpoint(out_dir / "networks.json", result.nets, run.params_hash)
        write_loss_trace(out_dir / "loss_trace.csv", result.trace)

        s, i = Grid(CHECK_GRID_N).coords()
        mask = Grid(CHECK_GRID_N).mask()
        worst = 0.0
        for regime in ALL_REGIMES:
            residual = pde_residual_batch(result.nets[regime], s[mask], i[mask], regime, run.params)
            worst = max(worst, float(residual.detach().abs().max()))

        manifest["result.steps_run"] = len(result.trace)
        manifest["result.final_loss"] = result.final_loss
        manifest["result.converged"] = result.converged
        manifest["result.max_pde_residual"] = worst
        print_success(f"trained {len(result.trace)} steps, final loss {result.final_loss:.3e}")

    manifest["wall_time"] = time.perf_counter() - start
    return EXIT_OK


# =============================================================================
# simulate
# =============================================================================

def cmd_simulate(args, run: RunConfig, out_dir: Path, manifest: dict) -> int:
    source = load_checked_source(args.value_source, run)
    mode = "controlled" if source is not None else "uncontrolled"
    print_header(f"Simulate ({mode}, {args.paths} path(s)) - {run.source}")

    config = run.path_config(horizon=args.horizon, seed=args.seed)
    schedule = run.attack_schedule(seed=config.seed)
    policy = OptimalSwitchingPolicy(source, run.costs) if source is not None else None

    if args.paths > 1:
        batch = simulate_paths(run.params, schedule, policy, config, n_paths=args.paths,
                               costs=run.costs, value_source=source)
        write_aggregate_csv(out_dir / "aggregate.csv", batch)
        write_path_summary_csv(out_dir / "paths.csv", batch)
        manifest["result.mean_cost"] = float(np.mean(batch.costs))
        manifest["result.mean_terminal_i"] = float(np.mean(batch.terminal_i))
        manifest["result.mean_protection_switches"] = float(np.mean(batch.protection_switch_counts()))
        print_success(f"{args.paths} paths, mean cost {manifest['result.mean_cost']:.6g}")
        return EXIT_OK

    uncontrolled = simulate(run.params, schedule, None, config, costs=run.costs)
    if source is not None:
        result = simulate_controlled(run.params, source, run.costs, schedule, config)
        trajectory = result.trajectory
        write_trajectory_csv(out_dir / "uncontrolled.csv", uncontrolled)
        write_controlled_log(out_dir / "controlled_log.csv", result.switch_log)
    else:
        trajectory = uncontrolled

    write_trajectory_csv(out_dir / "trajectory.csv", trajectory)
    write_switch_log(out_dir / "switch_log.csv", trajectory.switch_log)
    render_trajectory_chart(
        out_dir / "trajectory.svg",
        out_dir / "trajectory.csv",
        switch_log_csv=out_dir / "switch_log.csv",
        uncontrolled_csv=out_dir / "uncontrolled.csv" if source is not None else None,
        title=f"{mode} trajectory ({run.source}, seed {config.seed})",
    )

    manifest["result.cost"] = trajectory.cost
    manifest["result.uncontrolled_cost"] = uncontrolled.cost
    manifest["result.owner_pattern"] = _owner_pattern(trajectory)
    manifest["result.protection_switch_times"] = ",".join(
        f"{e.time:g}" for e in trajectory.protection_switches)
    manifest["result.terminal_i"] = float(trajectory.i[-1])
    for event in trajectory.switch_log:
        print_info(f"t={event.time:g}: {event.track} {event.from_level} -> {event.to_level}")
    print_success(f"discounted cost {trajectory.cost:.6g}")
    return EXIT_OK


# =============================================================================
# evaluate
# =============================================================================

def cmd_evaluate(args, run: RunConfig, out_dir: Path, manifest: dict) -> int:
    names = args.policy or ["never"]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate --policy entries: {names}")
    source = load_checked_source(args.value_source, run)
    policies = {name: policy_from_name(name, source, run.costs) for name in names}
    print_header(f"Evaluate {', '.join(names)} ({args.paths} paths) - {run.source}")

    config = run.path_config(seed=args.seed)
    schedule = run.attack_schedule(seed=config.seed)
    comparison = compare_policies(
        run.params, policies, schedule, args.paths, horizon=args.horizon, config=config,
        costs=run.costs, value_source=source, antithetic=args.antithetic, n_jobs=args.jobs,
    )

    estimates = list(comparison.estimates.values())
    write_mc_summary(out_dir / "mc_summary.csv", estimates)
    if comparison.differences:
        write_comparison_csv(out_dir / "comparison.csv", comparison.differences)

    for estimate in estimates:
        mean_i, se_i = terminal_infection_stats(estimate)
        manifest[f"result.{estimate.policy}.mean"] = estimate.mean
        manifest[f"result.{estimate.policy}.half_width"] = estimate.half_width
        manifest[f"result.{estimate.policy}.mean_terminal_i"] = mean_i
        print_info(f"{estimate.policy}: {estimate.mean:.6g} ± {estimate.half_width:.2g} "
                   f"(tail ≤ {estimate.tail_bound:.2g}), terminal I {mean_i:.4f} ± {1.96 * se_i:.2g}")
    for diff in comparison.differences:
        print_info(f"{diff.policy} - {diff.reference}: {diff.mean:.6g} (se {diff.se:.2g})")
    manifest["result.tail_bound"] = estimates[0].tail_bound
    print_success("evaluation written")
    return EXIT_OK


# =============================================================================
# check
# =============================================================================

def _solve_for(run: RunConfig, n: int) -> GridValueSource:
    field = solve_psor(Grid(n), run.params, run.costs, PsorOptions())
    return GridValueSource(field)


def cmd_check(args, run: RunConfig, out_dir: Path, manifest: dict) -> int:
    """Report the qualitative scenario behaviour over seed sweeps.

    Uses the scenario presets; the given config only labels the run.
    """
    print_header(f"Scenario checks (grid n={args.n}, {args.sweep} seeds)")
    report = {}

    first = ConfigService.from_preset("scenario1").config
    source = _solve_for(first, args.n)
    patterns = Counter()
    inside = 0
    for seed in range(args.sweep):
        traj = simulate_controlled(first.params, source, first.costs, first.attack_schedule(seed),
                                   first.path_config(seed=seed)).trajectory
        pattern = _owner_pattern(traj)
        patterns[pattern] += 1
        times = [e.time for e in traj.protection_switches]
        if pattern == "0→1→0" and all(0 < t < first.horizon for t in times):
            inside += 1
    modal, modal_count = patterns.most_common(1)[0]
    report["scenario1.modal_pattern"] = modal
    report["scenario1.modal_share"] = modal_count / args.sweep
    report["scenario1.pattern_010_inside_horizon"] = inside
    report["scenario1.patterns"] = ";".join(f"{k}:{v}" for k, v in sorted(patterns.items()))
    print_info(f"scenario 1 modal owner pattern {modal} ({modal_count}/{args.sweep} seeds)")

    narrated = ConfigService.from_preset("scenario2_narrated").config
    source2 = _solve_for(narrated, args.n)
    attack_times = narrated.attack_times
    hits = []
    for seed in range(args.sweep):
        traj = simulate_controlled(narrated.params, source2, narrated.costs,
                                   narrated.attack_schedule(seed),
                                   narrated.path_config(seed=seed)).trajectory
        switches = traj.protection_switches
        if (len(switches) == 2 and switches[0].to_level == 1
                and switches[0].time < attack_times[0] < switches[1].time < attack_times[1]):
            hits.append(seed)
    report["scenario2.narrated_order_seeds"] = len(hits)
    report["scenario2.first_matching_seed"] = hits[0] if hits else "none"
    print_info(f"scenario 2 narrated event order in {len(hits)}/{args.sweep} seeds")

    estimates = compare_policies(
        first.params,
        {"optimal": OptimalSwitchingPolicy(source, first.costs), "never": policy_from_name("never")},
        first.attack_schedule(), args.paths, horizon=first.horizon,
        config=first.path_config(), costs=first.costs, value_source=source,
    ).estimates
    report["efficacy.optimal_terminal_i"] = terminal_infection_stats(estimates["optimal"])[0]
    report["efficacy.never_terminal_i"] = terminal_infection_stats(estimates["never"])[0]
    report["efficacy.ratio"] = efficacy_ratio(estimates["optimal"], estimates["never"])
    print_info(f"terminal I ratio optimal/never = {report['efficacy.ratio']:.3f}")

    write_manifest(out_dir / "check_report.txt", report)
    manifest.update({f"result.{k}": v for k, v in report.items()})
    print_success(f"report written to {out_dir / 'check_report.txt'}")
    return EXIT_OK


# =============================================================================
# Argument parsing
# =============================================================================

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", "-c", type=Path, default=None,
                     help="Run config file (key = value)")
    sub.add_argument("--scenario", "-s", type=str, default=None,
                     help="Preset: 1, 2, a preset name from config/scenarios.json, "
                          "or 'custom' together with --config")
    sub.add_argument("--seed", type=int, default=None,
                     help="Master seed (default: the config's seed)")
    sub.add_argument("--out", "-o", type=Path, default=None,
                     help=f"Output directory (default: {DEFAULT_RUNS_DIR}/<command>_<config>)")
    sub.add_argument("--quiet", "-q", action="store_true",
                     help="Suppress progress output from the solvers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Optimal protection switching for a cyber-epidemic SIRS model",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__
    )
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="Solve for the value functions")
    _add_common(solve)
    solve.add_argument("--solver", choices=("grid", "dgm"), default="grid",
                       help="Grid obstacle solver or Deep Galerkin networks (default: grid)")
    solve.add_argument("--n", type=int, default=DEFAULT_GRID_N,
                       help=f"Grid intervals per axis (default: {DEFAULT_GRID_N})")
    solve.add_argument("--tol", type=float, default=PSOR_TOL,
                       help=f"Complementarity residual tolerance (default: {PSOR_TOL:g})")
    solve.add_argument("--omega", type=float, default=PSOR_OMEGA,
                       help=f"SOR relaxation (default: {PSOR_OMEGA})")
    solve.add_argument("--max-sweeps", type=int, default=PSOR_MAX_SWEEPS,
                       help=f"Sweep limit (default: {PSOR_MAX_SWEEPS})")
    solve.add_argument("--coupling-lambda", type=float, default=None,
                       help="Penalty coupling to the other attack level (default: off)")
    solve.add_argument("--cross-scheme", choices=CROSS_SCHEMES, default="monotone",
                       help="Diffusion stencil (default: monotone)")
    solve.add_argument("--warm-start", type=Path, default=None,
                       help="Field CSV to start the sweeps from")
    solve.add_argument("--steps", type=int, default=DGM_STEPS,
                       help=f"DGM training steps (default: {DGM_STEPS})")
    solve.add_argument("--penalty", type=float, default=0.0,
                       help="DGM obstacle penalty weight (default: 0)")
    solve.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd",
                       help="DGM optimizer (default: sgd)")
    solve.add_argument("--learning-rate", type=float, default=DGM_LEARNING_RATE,
                       help=f"DGM initial step size (default: {DGM_LEARNING_RATE:g})")
    solve.set_defaults(handler=cmd_solve)

    sim = commands.add_parser("simulate", help="Simulate paths")
    _add_common(sim)
    sim.add_argument("--value-source", type=Path, default=None,
                     help="Field CSV or network checkpoint; omit for the uncontrolled baseline")
    sim.add_argument("--paths", type=int, default=1,
                     help="Number of paths; more than 1 writes aggregate statistics only")
    sim.add_argument("--horizon", type=float, default=None,
                     help="Simulation horizon in days (default: the config's horizon)")
    sim.set_defaults(handler=cmd_simulate)

    ev = commands.add_parser("evaluate", help="Monte Carlo policy evaluation")
    _add_common(ev)
    ev.add_argument("--policy", action="append", default=None,
                    help="optimal, never, always or threshold:<v>; repeat to compare "
                         "(the first is the reference)")
    ev.add_argument("--value-source", type=Path, default=None,
                    help="Field CSV or network checkpoint (needed for optimal)")
    ev.add_argument("--paths", type=int, default=10_000, help="Number of paths (default: 10000)")
    ev.add_argument("--horizon", type=float, default=MC_HORIZON,
                    help=f"Truncation horizon in days (default: {MC_HORIZON:g})")
    ev.add_argument("--antithetic", action="store_true", help="Use antithetic noise pairs")
    ev.add_argument("--jobs", "-j", type=int, default=1, help="Parallel workers (default: 1)")
    ev.set_defaults(handler=cmd_evaluate)

    check = commands.add_parser("check", help="Qualitative scenario seed sweeps")
    _add_common(check)
    check.add_argument("--n", type=int, default=CHECK_GRID_N,
                       help=f"Grid intervals for the scenario solves (default: {CHECK_GRID_N})")
    check.add_argument("--sweep", type=int, default=100, help="Seeds per sweep (default: 100)")
    check.add_argument("--paths", type=int, default=1000,
                       help="Paths for the efficacy ratio (default: 1000)")
    check.set_defaults(handler=cmd_check)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.command == "check" and args.config is None and args.scenario is None:
        args.scenario = "1"

    try:
        if getattr(args, "paths", 1) < 1:
            raise ConfigError("--paths must be >= 1")
        run = load_run_config(args)
        out_dir = output_dir(args)
        out_dir.mkdir(parents=True, exist_ok=True)
    except ConfigError as e:
        print_error(str(e))
        return EXIT_USAGE

    with LogCapture(out_dir / "logs"):
        manifest = base_manifest(args, run, argv)
        try:
            write_run_config(out_dir, run)
            code = args.handler(args, run, out_dir, manifest)
        except (ConfigError, ParamsMismatchError) as e:
            print_error(str(e))
            return EXIT_USAGE
        except SwitchingError as e:
            print_error(f"{type(e).__name__}: {e}")
            return EXIT_FAILURE
        except KeyboardInterrupt:
            print_warning("interrupted")
            return EXIT_FAILURE
        except Exception as e:
            print_error(f"unexpected {type(e).__name__}: {e}")
            return EXIT_FAILURE
        write_manifest(out_dir / "manifest.txt", manifest)
    print_info(f"artifacts in {out_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
