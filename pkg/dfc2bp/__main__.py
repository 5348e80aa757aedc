import argparse
import sys
from pathlib import Path
from typing import List, Sequence

import rich.table
from rich import box
from rich_argparse import RichHelpFormatter

from dfc2bp import artifacts
from dfc2bp.config import RunConfig, dump_config, load_config, to_dict
from dfc2bp.console_output import (
    console,
    error_console,
    json_output_console,
    minimal_output_console,
    select_output,
)
from dfc2bp.errors import ConfigurationError, MissingArtifactError, StageError
from dfc2bp.pipeline import STAGE_SPECS, STAGES, Pipeline, StageAction, StageResult
from dfc2bp.plots import PLOT_KINDS, render_plots
from dfc2bp.tui import PipelineTUI

COMMAND_STAGES = {
    "simulate": ("simulate", "sense"),
    "imi": ("imi",),
    "irm": ("irm",),
    "nnmf": ("nnmf",),
    "run": STAGES,
}


def add_common_arguments(parser):
    run_group = parser.add_argument_group("run arguments")
    run_group.add_argument(
        "--config",
        type=Path,
        help="YAML configuration file. Every missing key keeps its default",
    )
    run_group.add_argument(
        "--seed", type=int, help="seed of the run, overriding the configuration"
    )
    run_group.add_argument(
        "--out",
        type=Path,
        help="run directory holding every artifact, overriding the configuration",
    )

    output_group = parser.add_argument_group("dfc2bp output arguments")
    output_group.add_argument(
        "--output",
        choices=["default", "minimal", "json"],
        default="default",
        help="minimal prints one artifact path per line, json prints the run manifest",
    )
    output_group.add_argument(
        "--debug",
        action="store_true",
        help="print full stack traces for exceptions",
    )


def get_parser():
    parser = argparse.ArgumentParser(
        prog="dfc2bp",
        description="From sensorimotor dynamic functional connectivity to behavior primitives",
        formatter_class=RichHelpFormatter,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    stage_help = {
        "simulate": "simulate the babbling agent and encode its sensor stream",
        "imi": "compute the sliding-window mutual information graphs",
        "irm": "extract functional modules and their link densities",
        "nnmf": "factorize the link densities into behavior factors",
        "run": "run every stage",
    }
    for command, help_text in stage_help.items():
        subparser = subparsers.add_parser(
            command, help=help_text, formatter_class=RichHelpFormatter
        )
        add_common_arguments(subparser)
        subparser.add_argument(
            "--resume",
            action="store_true",
            help="skip stages whose configuration, inputs and outputs are unchanged",
        )

    plot_parser = subparsers.add_parser(
        "plot", help="render SVG figures of a run", formatter_class=RichHelpFormatter
    )
    add_common_arguments(plot_parser)
    plot_parser.add_argument(
        "kinds",
        nargs="*",
        metavar="KIND",
        help=f"figures to render: {', '.join(PLOT_KINDS)}. Empty for all",
    )
    plot_parser.add_argument(
        "--window",
        type=int,
        help="window of the decomposition figure. Defaults to the most active window",
    )

    config_parser = subparsers.add_parser(
        "config",
        help="print the resolved configuration as YAML",
        formatter_class=RichHelpFormatter,
    )
    add_common_arguments(config_parser)

    return parser


def print_error(message: str):
    error_console.log(f"[red]ERROR:[default] {message}")


def print_summary(results: Sequence[StageResult], derived):
    table = rich.table.Table(box=box.SIMPLE)
    table.add_column("Stage")
    table.add_column("Result")
    table.add_column("Seconds", justify="right")
    for result in results:
        action = "up to date" if result.action == StageAction.SKIPPED else "computed"
        table.add_row(result.stage, action, f"{result.seconds:.1f}")
    console.print(table)

    quantities = rich.table.Table(box=box.SIMPLE)
    quantities.add_column("Quantity")
    quantities.add_column("Value", justify="right")
    for name in ("N_s", "N_windows", "N_c", "N_f", "D", "touch_episodes", "modality_purity"):
        if name in derived:
            value = derived[name]
            quantities.add_row(name, f"{value:.4f}" if isinstance(value, float) else str(value))
    console.print(quantities)


def print_episodes(run_dir: Path):
    path = run_dir / artifacts.EPISODES
    if not path.is_file():
        return
    rows = artifacts.read_rows(path)
    if not rows:
        return
    table = rich.table.Table(title="Touch episodes", box=box.SIMPLE)
    for column in ("episode", "kind", "start_time", "end_time", "leading_factor", "tactile_share"):
        table.add_column(column)
    for row in rows:
        table.add_row(
            row["episode"],
            row["kind"],
            f"{float(row['start_time']):.3f}",
            f"{float(row['end_time']):.3f}",
            row["leading_factor"],
            f"{float(row['tactile_share']):.2f}",
        )
    console.print(table)


def output_paths(run_dir: Path, results: Sequence[StageResult]) -> List[Path]:
    return [
        run_dir / name for result in results for name in STAGE_SPECS[result.stage].outputs
    ]


def run_stages(args, config: RunConfig):
    stages = COMMAND_STAGES[args.command]
    pipeline = Pipeline(config, resume=args.resume, tui=PipelineTUI(stages))
    results = []
    error = None
    with pipeline.tui:
        try:
            results = pipeline.run(stages)
        except StageError as e:
            if args.debug:
                console.print_exception(show_locals=True)
            pipeline.tui.set_item_progress_label(e.stage, "[red]:x: Error")
            error = str(e)

    if error is not None:
        print_error(error)
        sys.exit(1)

    print_summary(results, pipeline.manifest.derived)
    if "nnmf" in stages:
        print_episodes(pipeline.run_dir)
    for path in output_paths(pipeline.run_dir, results):
        minimal_output_console.print(str(path))
    json_output_console.print_json(data=pipeline.manifest.to_json(), indent=None)


def plot(args, config: RunConfig):
    try:
        written = render_plots(
            Path(config.output_dir), config, args.kinds or PLOT_KINDS, window=args.window
        )
    except (MissingArtifactError, IndexError, ValueError) as e:
        if args.debug:
            console.print_exception(show_locals=True)
        print_error(f"plot: {e}")
        sys.exit(1)
    for path in written:
        console.print(f":framed_picture: {path}")
        minimal_output_console.print(str(path))
    json_output_console.print_json(data=[str(path) for path in written], indent=None)


def main():
    args = get_parser().parse_args()
    select_output(args.output)

    try:
        config = load_config(args.config, seed=args.seed, output_dir=args.out)
    except ConfigurationError as e:
        if args.debug:
            console.print_exception(show_locals=True)
        print_error(f"config: {e}")
        sys.exit(1)

    if args.command == "config":
        console.out(dump_config(config), end="")
        minimal_output_console.out(dump_config(config), end="")
        json_output_console.print_json(data=to_dict(config), indent=None)
    elif args.command == "plot":
        plot(args, config)
    else:
        run_stages(args, config)


if __name__ == "__main__":
    main()
