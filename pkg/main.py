#!/usr/bin/env python3
"""
Main entry point for the cgrapipe compiler

Places, routes, timing-analyzes and pipelines dense and sparse
applications for a CGRA with single-cycle multi-hop interconnect
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from cgrapipe.arch import (
    DelayLibrary,
    build_routing_graph,
    enumerate_tile_paths,
    load_arch_file,
)
from cgrapipe.benchmarks import benchmark_names, load_benchmark
from cgrapipe.bitstream import Config, decode_config
from cgrapipe.dfg import AppGraph, Mode, parse_app
from cgrapipe.errors import INPUT_ERRORS, AppParseError, CgraError, VerificationError
from cgrapipe.passes import parse_pass_selection
from cgrapipe.report import dump_fmax_bars, is_monotone, render_table, render_text, row_for, run_ablation
from cgrapipe.route import RoutedApp, dump_pnr, load_pnr
from cgrapipe.sim import Stimulus, equivalent_modulo_latency, simulate
from cgrapipe.sta import TimingReport, critical_path
from config import Settings, settings as env_settings
from flow import CompileFlow, FlowState, compile_app, default_stimulus

console = Console()
err_console = Console(stderr=True)
logger = logging.getLogger("cgrapipe")

DEFAULT_ARCH = Path(__file__).resolve().parent / "data" / "arch_8x8.json"

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_STAGE = 2
EXIT_MISMATCH = 3


def exit_code(error: BaseException) -> int:
    """Map a failure to the documented exit status"""
    if isinstance(error, VerificationError):
        return EXIT_MISMATCH
    if isinstance(error, INPUT_ERRORS) or isinstance(error, (OSError, ValueError, KeyError)):
        return EXIT_INPUT
    return EXIT_STAGE


def setup_logging(level: str, verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else getattr(logging, level, logging.WARNING),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


def fail(error: BaseException, stage: Optional[str] = None) -> int:
    stage = stage or getattr(error, "stage", "input")
    err_console.print(f"[bold red]❌ {stage} failed: {error}[/bold red]")
    return exit_code(error)


# ---------------------------------------------------------------------------
# Shared loading
# ---------------------------------------------------------------------------

def load_architecture(path: str):
    """Architecture plus delay library; files without delays get the uniform library"""
    spec, lib = load_arch_file(path)
    return spec, lib or DelayLibrary.uniform(spec)


def load_application(args, spec) -> AppGraph:
    if getattr(args, "bench", None):
        try:
            g = load_benchmark(args.bench)
        except KeyError as e:
            raise AppParseError(str(e.args[0])) from e
    elif getattr(args, "app", None):
        g = parse_app(Path(args.app).read_text(encoding="utf-8"), spec)
    else:
        raise AppParseError("give --app FILE or --bench NAME")
    if getattr(args, "sparse", False):
        g.mode = Mode.SPARSE
    return g


def load_design(path: str, spec) -> RoutedApp:
    """A config file decodes to a routed design; anything else is an application"""
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text)
    if isinstance(data, dict) and "tiles" in data:
        return decode_config(Config.from_dict(data), spec)
    return parse_app(text, spec)


def resolve_settings(args) -> Settings:
    """Environment settings with CLI flags on top"""
    overrides = {
        "seed": getattr(args, "seed", None),
        "alpha": getattr(args, "alpha", None),
        "gamma": getattr(args, "gamma", None),
        "route_iters": getattr(args, "route_iters", None),
        "chain_n": getattr(args, "chain_n", None),
        "bcast_threshold": getattr(args, "bcast_threshold", None),
        "bcast_fanout": getattr(args, "bcast_fanout", None),
        "bcast_budget": getattr(args, "bcast_budget", None),
        "max_postpnr_iters": getattr(args, "max_postpnr_iters", None),
        "fifo_depth": getattr(args, "fifo_depth", None),
    }
    return env_settings.with_overrides(**overrides)


def write_text(path: Optional[str], text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
        console.print(f"[green]✓ wrote {path}[/green]")


def timing_table(report: TimingReport) -> Table:
    table = Table(title=f"Critical path ({report.signal})")
    table.add_column("#", justify="right")
    table.add_column("Kind", style="cyan")
    table.add_column("Element")
    table.add_column("Net")
    table.add_column("Delay (ns)", justify="right")
    for i, element in enumerate(report.critical_path):
        table.add_row(str(i), element.kind, element.label, element.net or "", f"{element.delay:.3f}")
    return table


def print_timing(report: TimingReport) -> None:
    console.print(timing_table(report))
    console.print(
        f"[bold]total {report.total_ns:.3f} ns[/bold]  "
        f"[green]fmax {report.fmax_mhz:.1f} MHz[/green]  endpoint {report.endpoint}"
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_compile(args) -> int:
    """Run the full flow and write config, PnR result and timing report"""
    spec, lib = load_architecture(args.arch)
    settings = resolve_settings(args)
    is_valid, error_msg = settings.validate_settings()
    if not is_valid:
        err_console.print(f"[bold red]❌ Configuration Error: {error_msg}[/bold red]")
        return EXIT_INPUT
    selection = parse_pass_selection(args.passes)
    g = load_application(args, spec)
    stim = Stimulus.from_json(Path(args.stim).read_text(encoding="utf-8")) if args.stim else None

    state = CompileFlow().run(FlowState(
        spec=spec,
        lib=lib,
        settings=settings,
        selection=selection,
        app=g,
        stim=stim,
        dup_factor=args.dup_factor,
        verify=not args.no_verify,
    ))
    for stage in state.completed:
        console.print(f"[green]✓ {stage}[/green]")
    if state.error is not None:
        return fail(state.error, state.failed_stage)

    print_timing(state.timing)
    for warning in state.warnings:
        console.print(f"[yellow]⚠ {warning}[/yellow]")
    report = {
        **state.timing.to_dict(),
        "passes": sorted(selection),
        "register_bits": state.config.register_bits(),
        "latency_deltas": state.latency_deltas,
        "output_offset": state.offset,
        "warnings": state.warnings,
    }
    write_text(args.out, state.config.to_json())
    write_text(args.pnr, dump_pnr(state.routed))
    write_text(args.report, json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sta(args) -> int:
    """Timing report for an emitted config, or for an application plus PnR result"""
    spec, lib = load_architecture(args.arch)
    if args.config:
        r = decode_config(Config.from_json(Path(args.config).read_text(encoding="utf-8")), spec)
    else:
        if not args.pnr:
            raise AppParseError("sta needs --config, or --app/--bench with --pnr")
        g = load_application(args, spec)
        r = load_pnr(Path(args.pnr).read_text(encoding="utf-8"), g, spec)
    report = critical_path(r, lib, period=args.period)
    print_timing(report)
    write_text(args.out, json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sim(args) -> int:
    """Simulate a config or application; optionally check equivalence against another"""
    spec, _ = load_architecture(args.arch)
    settings = resolve_settings(args)
    if args.config:
        design = load_design(args.config, spec)
    else:
        design = load_application(args, spec)
    g = design.graph if isinstance(design, RoutedApp) else design
    stim = (
        Stimulus.from_json(Path(args.stim).read_text(encoding="utf-8"))
        if args.stim else default_stimulus(g, settings)
    )
    result = simulate(design, stim, max_cycles=args.max_cycles)
    console.print(f"[green]✓ simulated {result.cycles_executed} cycles[/green]")
    if result.deadlock:
        console.print("[bold red]❌ deadlock detected[/bold red]")
    for warning in result.warnings:
        console.print(f"[yellow]⚠ {warning}[/yellow]")
    write_text(args.out, result.to_json())

    if args.against:
        other = simulate(load_design(args.against, spec), stim, max_cycles=args.max_cycles)
        same, offset = equivalent_modulo_latency(result, other)
        if not same:
            return fail(VerificationError(f"{args.against} is not equivalent"), "verify")
        console.print(f"[green]✓ equivalent, offset {offset} cycles[/green]")
    return EXIT_OK


def cmd_report(args) -> int:
    """Ablation table over pass prefixes, or a comparison of existing configs"""
    spec, lib = load_architecture(args.arch)
    settings = resolve_settings(args)
    is_valid, error_msg = settings.validate_settings()
    if not is_valid:
        err_console.print(f"[bold red]❌ Configuration Error: {error_msg}[/bold red]")
        return EXIT_INPUT

    if args.configs:
        rows = [row_for(Path(p).stem, load_design(p, spec), lib) for p in args.configs]
    else:
        g = load_application(args, spec)
        flow = CompileFlow()

        def compile_fn(selection: set[str]) -> RoutedApp:
            state = compile_app(spec, lib, g, settings, selection, flow=flow)
            if state.error is not None:
                raise state.error
            return state.routed

        rows = run_ablation(compile_fn, lib)

    console.print(render_table(rows))
    if len(rows) > 1 and not is_monotone(rows):
        console.print("[yellow]⚠ critical path is not monotone across the rows[/yellow]")
    write_text(args.out, render_text(rows))
    write_text(args.bars, dump_fmax_bars(rows))
    return EXIT_OK


def cmd_arch_check(args) -> int:
    """Validate an architecture file and summarize it"""
    spec, lib = load_architecture(args.arch)
    rg = build_routing_graph(spec)
    table = Table(title=f"{spec.rows}x{spec.cols} array")
    table.add_column("Property", style="cyan")
    table.add_column("Value", justify="right")
    for kind in spec.kinds_present():
        table.add_row(f"{kind.value} tiles", str(len(spec.tiles_of(kind))))
    table.add_row("tracks (16-bit / 1-bit)", f"{spec.tracks16} / {spec.tracks1}")
    table.add_row("SB register sites", "yes" if spec.sb_register_sites else "no")
    table.add_row("hardened nets", ", ".join(sorted(spec.hardened_nets)) or "-")
    table.add_row("routing nodes", str(len(rg)))
    table.add_row("routing edges", str(rg.graph.number_of_edges()))
    table.add_row("delay classes", str(len(enumerate_tile_paths(spec))))
    table.add_row("PE core / hop (ns)", f"{lib.pe_core_ns} / {max(lib.sb_hop_ns.values(), default=0.0)}")
    console.print(table)
    console.print("[green]✓ architecture is valid[/green]")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_app_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--app", help="application file")
    p.add_argument("--bench", help=f"shipped benchmark ({', '.join(benchmark_names())})")
    p.add_argument("--sparse", action="store_true", help="treat the application as ready-valid")


def _add_tuning_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, help="placement criticality exponent")
    p.add_argument("--gamma", type=float, help="pass-through tile weight")
    p.add_argument("--route-iters", type=int, help="PathFinder iteration limit")
    p.add_argument("--chain-n", type=int, help="register chain length turned into a shift register")
    p.add_argument("--bcast-threshold", type=int, help="fanout that makes a net a broadcast")
    p.add_argument("--bcast-fanout", type=int, help="fanout per broadcast tree level")
    p.add_argument("--bcast-budget", type=int, help="registers available to broadcast trees")
    p.add_argument("--max-postpnr-iters", type=int, help="post-PnR iteration limit")
    p.add_argument("--fifo-depth", type=int, help="depth of inserted FIFOs")
    p.add_argument("--passes", default="all", help="all, none, or a comma list of compute,broadcast,chains,placement,postpnr")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--arch", default=str(DEFAULT_ARCH), help="architecture and delay file")
    common.add_argument("--seed", type=int, help="placement seed")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="cgrapipe", description="CGRA place, route, STA and pipelining")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", parents=[common], help="compile an application to a config")
    _add_app_args(p)
    _add_tuning_args(p)
    p.add_argument("--out", default="config.json")
    p.add_argument("--pnr", help="PnR result file")
    p.add_argument("--report", help="timing report file")
    p.add_argument("--stim", help="stimulus used for verification")
    p.add_argument("--dup-factor", type=int, default=1)
    p.add_argument("--no-verify", action="store_true")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("sta", parents=[common], help="static timing analysis")
    _add_app_args(p)
    p.add_argument("--config")
    p.add_argument("--pnr")
    p.add_argument("--period", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sta)

    p = sub.add_parser("sim", parents=[common], help="functional simulation")
    _add_app_args(p)
    p.add_argument("--config")
    p.add_argument("--stim")
    p.add_argument("--out")
    p.add_argument("--against", help="second config or application to compare with")
    p.add_argument("--max-cycles", type=int, default=100_000)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("report", parents=[common], help="ablation table and fmax bars")
    _add_app_args(p)
    _add_tuning_args(p)
    p.add_argument("--configs", nargs="+")
    p.add_argument("--out")
    p.add_argument("--bars")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("arch-check", parents=[common], help="validate an architecture file")
    p.set_defaults(func=cmd_arch_check)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """Main function to run the compiler"""
    args = build_parser().parse_args(argv)
    setup_logging(env_settings.log_level, args.verbose)
    try:
        return args.func(args)
    except (CgraError, OSError, ValueError, KeyError) as e:
        return fail(e)


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
