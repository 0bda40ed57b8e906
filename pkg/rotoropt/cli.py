#!/usr/bin/env python3
import argparse
import logging
import os
import sys

from colorama import Fore, Style, init

from .config import CONFIG_FILE, RunConfig
from .elasticity import precompute_psi_table
from .errors import ConfigError, RotorOptError, TableError
from .export import (PSI_FILE, ArtifactWriter, latest_checkpoint, load_psi_table, load_table, load_tables,
                     psi_fingerprint, read_checkpoint, save_psi_table, save_table, table_file,
                     table_fingerprint)
from .helpers import fail, hint, send_notification, setup_logging, stage, success, warn
from .optimizer import run_volume_controlled
from .problem import RotorProblem
from .td_engine import build_table, required_pairs

# Initialize colorama
init(autoreset=True)

logger = logging.getLogger("rotoropt")

COMMANDS = ["precompute", "optimize", "evaluate", "export", "help"]

EXIT_OK = 0
EXIT_INTERRUPTED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def show_help():
    """Display all available commands"""
    print("\n" + Fore.CYAN + Style.BRIGHT + "📚 rotoropt Commands")
    print(Fore.CYAN + "=" * 60)

    print(Fore.MAGENTA + Style.BRIGHT + "\n🚀 Pipeline")
    print(Fore.CYAN + "-" * 60)
    pipeline = [
        ("precompute", "Build TD sample tables and the Psi table"),
        ("optimize", "Run the volume-controlled level-set descent"),
        ("evaluate", "Solve all physics on a design and write report.json"),
        ("export", "Write fields.vtk and torque_positions.csv for a design"),
    ]
    for cmd, desc in pipeline:
        print(Fore.GREEN + f"  {cmd.ljust(20)}" + Fore.WHITE + f"{desc}")

    print(Fore.YELLOW + Style.BRIGHT + "\n⚙️  Options")
    print(Fore.CYAN + "-" * 60)
    options = [
        ("--config <path>", f"Run configuration (default {CONFIG_FILE})"),
        ("--out <dir>", "Output directory (overrides output_dir)"),
        ("--threads <n>", "Worker threads for solves and sampling"),
        ("--deterministic", "Single-threaded, reproducible run"),
        ("--design <csv>", "Level-set checkpoint to evaluate or export"),
        ("--verbose", "Debug logging"),
    ]
    for cmd, desc in options:
        print(Fore.GREEN + f"  {cmd.ljust(20)}" + Fore.WHITE + f"{desc}")

    print(Fore.CYAN + "\n" + "=" * 60)
    print(Fore.YELLOW + "💡 Exit codes: 0 success, 2 config error, 3 solver failure")


def build_parser():
    parser = argparse.ArgumentParser(prog="rotoropt", add_help=False)
    parser.add_argument("command", nargs="?", default="help")
    parser.add_argument("--config", default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--deterministic", action="store_true")
    parser.add_argument("--design", default=None)
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("-h", "--help", action="store_true")
    return parser


def load_run(args):
    run = RunConfig.load(args.config)
    changes = {}
    if args.out:
        changes["output_dir"] = args.out
    if args.threads is not None:
        changes["threads"] = args.threads
    run = run.replace(**changes) if changes else run
    threads = run.effective_threads(args.deterministic)
    return run.replace(threads=threads) if threads != run.threads else run


# -- commands -------------------------------------------------------------------

def precompute(run):
    """Build every TD sample table and the Psi table that is not already valid on disk."""
    directory = run.table_dir
    fingerprint = table_fingerprint(run)
    built = 0
    for pair in required_pairs():
        try:
            load_table(pair, directory, fingerprint)
            print(Fore.CYAN + f"✓ table {pair} is up to date")
            continue
        except TableError as exc:
            if os.path.exists(os.path.join(directory, table_file(pair))):
                warn(f"{exc}; rebuilding")
        with stage(f"Sampling table {pair}..."):
            table = build_table(pair, run.laws(), run.radial_samples, run.angular_samples, run.b_max_t,
                                run.threads, run.exterior_min_level, run.exterior_max_level)
            save_table(table, directory, fingerprint)
        built += 1

    fingerprint = psi_fingerprint(run)
    try:
        load_psi_table(directory, fingerprint)
        print(Fore.CYAN + "✓ Psi table is up to date")
    except TableError as exc:
        if os.path.exists(os.path.join(directory, PSI_FILE)):
            warn(f"{exc}; rebuilding")
        with stage("Integrating the Psi table..."):
            table = precompute_psi_table(run.elastic_params(), run.psi_r_samples, run.psi_stress_samples,
                                         run.psi_stress_range, run.threads)
            save_psi_table(table, directory, fingerprint)
        built += 1
    success(f"Tables ready in {directory} ({built} built)")
    return built


def load_problem(run, with_tables=True):
    tables = psi_table = None
    if with_tables:
        tables = load_tables(required_pairs(), run.table_dir, table_fingerprint(run))
        if run.stress_weight > 0.0:
            psi_table = load_psi_table(run.table_dir, psi_fingerprint(run))
    with stage("Meshing the pole..."):
        problem = RotorProblem(run, tables, psi_table)
    logger.info("mesh: %d nodes, %d elements, %d design nodes", problem.mesh.n_nodes,
                problem.mesh.n_elements, problem.space.n_nodes)
    return problem


def design_for(problem, run, design=None):
    path = design or latest_checkpoint(run.output_dir)
    if path:
        logger.info("design from %s", path)
        return read_checkpoint(path, problem.space)
    return problem.initial_design()


def write_design_artifacts(problem, writer, psi):
    full = problem.full_analysis(psi)
    report = problem.report(psi, full)
    writer.report(report)
    writer.torques(full.state.alphas, full.torques)
    writer.fields(problem, full)
    return report


def optimize(run):
    problem = load_problem(run)
    writer = ArtifactWriter(run.output_dir, run.hash)
    psi0 = problem.initial_design()
    writer.checkpoint(0, psi0)
    with stage("Optimizing..."):
        history = run_volume_controlled(problem, psi0, problem.budget, run.optimizer_params(),
                                        on_accept=writer.checkpoint)
    writer.history(history)
    writer.plot_history(history)
    with stage("Evaluating the final design..."):
        report = write_design_artifacts(problem, writer, history.psi)
    writer.manifest()
    print_report(report)
    if history.error:
        fail(f"Optimization aborted after {history.iterations - 1} iterations: {history.error}")
        return EXIT_SOLVER
    success(f"Optimization finished ({history.reason}) after {history.iterations - 1} iterations")
    send_notification("rotoropt", f"Optimization finished: {history.reason}")
    return EXIT_OK


def evaluate(run, design=None):
    problem = load_problem(run, with_tables=False)
    psi = design_for(problem, run, design)
    writer = ArtifactWriter(run.output_dir, run.hash)
    with stage("Solving magnetics, heat and elasticity..."):
        report = problem.report(psi)
    writer.report(report)
    writer.manifest()
    print_report(report)
    return EXIT_OK


def export(run, design=None):
    problem = load_problem(run, with_tables=False)
    psi = design_for(problem, run, design)
    writer = ArtifactWriter(run.output_dir, run.hash)
    with stage("Writing fields..."):
        write_design_artifacts(problem, writer, psi)
    writer.manifest()
    success(f"Fields written to {run.output_dir}")
    return EXIT_OK


def print_report(report):
    print(Fore.CYAN + "\n📊 Design report")
    print(Fore.CYAN + "-" * 60)
    rows = [
        ("average torque", f"{report['avg_torque']:.2f} N m"),
        ("static torque", f"{report['avg_torque_static']:.2f} N m"),
        ("max magnet temperature", f"{report['max_temp']:.1f} degC"),
        ("max von Mises stress", f"{report['max_vm'] / 1e6:.1f} MPa"),
        ("eddy losses", f"{report['eddy_loss_total']:.1f} W"),
        ("magnet volume", f"{report['magnet_volume'] * 1e6:.1f} mm^2 of {report['volume_cap'] * 1e6:.1f}"),
    ]
    for name, value in rows:
        print(Fore.GREEN + f"  {name.ljust(24)}" + Fore.WHITE + value)


def execute_command(command, run, design=None):
    """Run one command; returns its exit code, or None for an unknown command."""
    if command == "precompute":
        precompute(run)
        return EXIT_OK
    elif command == "optimize":
        return optimize(run)
    elif command == "evaluate":
        return evaluate(run, design)
    elif command == "export":
        return export(run, design)
    return None


def main(argv=None):
    args = build_parser().parse_args(sys.argv[1:] if argv is None else argv)
    setup_logging(args.verbose)
    command = args.command.strip().lower()
    if command == "help" or args.help:
        show_help()
        return EXIT_OK
    if command not in COMMANDS:
        fail(f"Unknown command: {command}")
        hint("Type 'rotoropt help' to see available commands.")
        return EXIT_INTERRUPTED
    if args.design and not os.path.exists(args.design):
        fail(f"Design file not found: {args.design}")
        return EXIT_CONFIG
    try:
        run = load_run(args)
        return execute_command(command, run, args.design)
    except (ConfigError, TableError) as exc:
        fail(str(exc))
        if isinstance(exc, TableError):
            hint("Run 'rotoropt precompute' with the same config first.")
        return EXIT_CONFIG
    except RotorOptError as exc:
        fail(f"Solver failure: {exc}")
        return EXIT_SOLVER
    except KeyboardInterrupt:
        print(Fore.YELLOW + "\n🚫 Cancelled.")
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
