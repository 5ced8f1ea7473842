"""
Marks the entry point into the application
"""

import argparse
import logging
import sys
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Type

from usvplanner.config.defaults import (
    EXIT_COLLISION,
    EXIT_CRASH,
    EXIT_OK,
    EXIT_PARSE_FAILURE,
    EXIT_PLANNING_FAILURE,
    EXIT_SOLVER_FAILURE,
    GRID_RESOLUTION,
    INFLATION_RADIUS,
)
from usvplanner.control import TrackingAborted
from usvplanner.fileio import (
    FileFormatError,
    read_camera,
    read_pgm,
    read_trajectory,
    write_grid,
    write_tracking_log,
)
from usvplanner.grid import inflate
from usvplanner.harness import (
    VARIANTS,
    ConfigSource,
    Scenario,
    ScenarioError,
    SettingData,
    StageFailure,
    VariantMetrics,
    file_tag,
    load_scenario,
    run_ablation,
    run_variant,
    track_trajectory,
    write_outcome,
)
from usvplanner.mapping import MappingError, mask_to_grid, view_grid_spec
from usvplanner.optimizer import TrajectoryCollision, TrajectoryError
from usvplanner.planning.hybrid_astar import PlanningError
from usvplanner.render import Overlay, render_svg
from usvplanner.scenarios import SCENARIOS, scenario_path
from usvplanner.version import USV_PLANNER_VERSION


TRACEBACK_LOG_FILENAME = "usv-planner-tracebacks.log"
DEBUG_LOG_FILENAME = "usv-planner-debug.log"

# Create a logger for this application
cli_logger = logging.getLogger(__name__)
cli_logger.setLevel(logging.DEBUG)
cli_logfile_handler = logging.FileHandler(
    TRACEBACK_LOG_FILENAME,
    delay=True,  # Don't open the file until there's a logging event
)
cli_logger.addHandler(cli_logfile_handler)

package_logger = logging.getLogger("usvplanner")

# Checked in order, so subclasses must precede their bases
EXIT_CODES: List[Tuple[Tuple[Type[BaseException], ...], int]] = [
    ((FileFormatError, ScenarioError, MappingError), EXIT_PARSE_FAILURE),
    ((PlanningError,), EXIT_PLANNING_FAILURE),
    ((TrajectoryCollision, TrackingAborted), EXIT_COLLISION),
    ((TrajectoryError,), EXIT_SOLVER_FAILURE),
]

METRIC_LABELS: Dict[str, str] = {
    "generated_length": "generated length (m)",
    "executed_length": "executed length (m)",
    "rmse": "tracking RMSE (m)",
    "max_error": "max tracking error (m)",
    "mean_speed": "mean speed (m/s)",
    "duration": "duration (s)",
    "replans": "replans",
    "planning_s": "planning time (s)",
    "control_ms": "mean control time (ms)",
    "overruns": "control overruns",
}


def in_color(color: str, text: str) -> str:
    color_for_str = {
        "red": "1",
        "green": "2",
        "yellow": "3",
        "blue": "4",
        "purple": "5",
        "cyan": "6",
    }
    return f"\033[9{color_for_str[color]}m{text}\033[0m"


def exit_with_error(
    error_message: str, *, helper_text: str = "", error_code: int = EXIT_CRASH
) -> None:
    print(in_color("red", error_message))
    if helper_text:
        print(helper_text)
    sys.exit(error_code)


def exit_code_for(error: BaseException) -> Optional[int]:
    """Exit code of a known failure, or None for a crash"""
    if isinstance(error, StageFailure):
        error = error.error
    for classes, code in EXIT_CODES:
        if isinstance(error, classes):
            return code
    return None


def _scenario_arguments() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument(
        "scenario",
        help=f"scenario file, or one of: {', '.join(SCENARIOS)}",
    )
    parent.add_argument(
        "--full-size",
        action="store_true",
        default=False,
        help="stretch the scenario onto the full 200 x 100 m field",
    )
    parent.add_argument(
        "--seed",
        type=int,
        help="seed for randomized obstacle placement (default: scenario seed)",
    )
    return parent


def _svg_arguments() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    svg_group = parent.add_mutually_exclusive_group()
    svg_group.add_argument(
        "--svg",
        dest="svg",
        action="store_true",
        default=True,
        help="render an SVG figure (default)",
    )
    svg_group.add_argument(
        "--no-svg",
        dest="svg",
        action="store_false",
        help="do not render an SVG figure",
    )
    return parent


def _output_arguments() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False, parents=[_svg_arguments()])
    parent.add_argument(
        "--out-dir",
        type=Path,
        default=Path("."),
        help="directory for output files (default: current directory)",
    )
    return parent


def parse_args(argv: List[str]) -> argparse.Namespace:
    description = """
        Plans, optimizes and tracks trajectories for an under-actuated
        surface vessel, and compares the pipeline variants.
        """
    formatter_class = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        description=description, formatter_class=formatter_class
    )
    parser.add_argument(
        "-v",
        "--version",
        action="store_true",
        default=False,
        help="show usv-planner version and exit",
    )
    parser.add_argument(
        "-d",
        "--debug",
        action="store_true",
        help=f"log package details to {DEBUG_LOG_FILENAME}",
    )
    parser.add_argument(
        "--profile",
        dest="profile",
        action="store_true",
        default=False,
        help="profile runtime",
    )

    scenario_args = _scenario_arguments()
    output_args = _output_arguments()
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")

    plan = commands.add_parser(
        "plan",
        parents=[scenario_args, output_args],
        help="run one pipeline variant on a scenario",
    )
    plan.add_argument(
        "--variant",
        choices=VARIANTS,
        default="GOP+LOP",
        help="pipeline variant (default: %(default)s)",
    )

    track = commands.add_parser(
        "track",
        parents=[scenario_args, output_args],
        help="track a trajectory file on a scenario's map",
    )
    track.add_argument(
        "--trajectory",
        type=Path,
        required=True,
        help="trajectory CSV to track",
    )
    track.add_argument(
        "--controller",
        choices=("nmpc", "pid"),
        default="nmpc",
        help="tracking controller (default: %(default)s)",
    )

    bench = commands.add_parser(
        "bench",
        parents=[scenario_args, output_args],
        help="compare pipeline variants on a scenario",
    )
    bench.add_argument(
        "--variants",
        nargs="+",
        choices=VARIANTS,
        help="variants to compare (default: all)",
    )
    bench.add_argument(
        "--jobs",
        type=int,
        default=1,
        help="variants run in parallel (default: %(default)s)",
    )

    project = commands.add_parser(
        "project",
        parents=[_svg_arguments()],
        help="project a segmentation mask into an occupancy grid file",
    )
    project.add_argument("--mask", type=Path, required=True, help="binary PGM mask")
    project.add_argument(
        "--camera", type=Path, required=True, help="camera parameter file"
    )
    project.add_argument("--out", type=Path, required=True, help="grid file to write")
    project.add_argument(
        "--resolution",
        type=float,
        default=GRID_RESOLUTION,
        help="cell size in metres (default: %(default)s)",
    )
    project.add_argument(
        "--inflation",
        type=float,
        default=INFLATION_RADIUS,
        help="inflation radius in metres (default: %(default)s)",
    )

    return parser.parse_args(argv)


def print_setting(setting: str, data: SettingData, suffix: str = "") -> None:
    print(f"   {setting} '{data.value}' specified {data.source.value}{suffix}.")


def print_metrics(tag: str, metrics: VariantMetrics) -> None:
    print(f"{tag}:")
    for key, label in METRIC_LABELS.items():
        value = metrics[key]  # type: ignore[literal-required]
        text = f"{value:.3f}" if isinstance(value, float) else str(value)
        print(f"   {label}: {text}")


def _load(args: argparse.Namespace) -> Scenario:
    path = scenario_path(args.scenario)
    scenario = load_scenario(path, full_size=args.full_size, seed=args.seed)
    print(f"Loading scenario {in_color('blue', scenario.name)} from {path} with:")
    for setting, data in scenario.settings.items():
        if data.source != ConfigSource.DEFAULT:
            print_setting(setting, data)
    print(
        f"   {scenario.grid.ncols}x{scenario.grid.nrows} cells,"
        f" {scenario.obstacle_count} obstacles"
    )
    return scenario


def _write_svg(path: Path, document: str, files: List[Path]) -> None:
    path.write_text(document)
    files.append(path)


def _report_files(files: Sequence[Path]) -> None:
    if files:
        print("Wrote:")
        for path in files:
            print(f"   {path}")


def run_plan(args: argparse.Namespace) -> int:
    scenario = _load(args)
    outcome = run_variant(scenario, args.variant)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    files = write_outcome(scenario, outcome, args.out_dir)
    if args.svg:
        overlays = [
            Overlay(outcome.path, "reference", linestyle="--"),
            Overlay(outcome.generated, outcome.tag),
            Overlay(outcome.executed, "executed", linestyle=":"),
        ]
        stem = f"{scenario.name}_{file_tag(outcome.tag)}"
        title = f"{scenario.name}: {outcome.tag}"
        _write_svg(
            args.out_dir / f"{stem}.svg",
            render_svg(scenario.grid, overlays, title=title),
            files,
        )
    print_metrics(outcome.tag, outcome.metrics)
    _report_files(files)
    return EXIT_OK


def run_track(args: argparse.Namespace) -> int:
    scenario = _load(args)
    trajectory = read_trajectory(args.trajectory)
    log, metrics = track_trajectory(scenario, trajectory, args.controller)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{scenario.name}_{args.controller}"
    files = [args.out_dir / f"{stem}_tracking.csv"]
    write_tracking_log(files[0], log)
    if args.svg:
        overlays = [
            Overlay(trajectory, "reference", linestyle="--"),
            Overlay(log.executed, args.controller.upper()),
        ]
        _write_svg(
            args.out_dir / f"{stem}_tracking.svg",
            render_svg(scenario.grid, overlays, title=f"{scenario.name}: tracking"),
            files,
        )
    print_metrics(args.controller.upper(), metrics)
    if log.degraded_steps:
        print(in_color("yellow", f"   {log.degraded_steps} degraded NMPC steps"))
    _report_files(files)
    return EXIT_OK


def run_bench(args: argparse.Namespace) -> int:
    scenario = _load(args)
    report = run_ablation(
        scenario, args.variants, args.out_dir, svg=args.svg, jobs=args.jobs
    )
    print(report.to_text())
    _report_files(report.files)
    for tag, failure in report.failures.items():
        print(in_color("red", f"{tag}: {failure}"))
    if report.failures:
        first = next(iter(report.failures.values()))
        return exit_code_for(first) or EXIT_CRASH
    return EXIT_OK


def run_project(args: argparse.Namespace) -> int:
    mask = read_pgm(args.mask)
    intr, pose = read_camera(args.camera)
    spec = view_grid_spec(intr, pose, args.resolution)
    grid = inflate(mask_to_grid(mask, intr, pose, spec), args.inflation)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_grid(args.out, grid)
    files = [args.out]
    if args.svg:
        _write_svg(args.out.with_suffix(".svg"), render_svg(grid), files)
    print(
        f"Projected {mask.width}x{mask.height} mask onto"
        f" {grid.ncols}x{grid.nrows} cells ({grid.occupied_count()} occupied)"
    )
    _report_files(files)
    return EXIT_OK


COMMANDS = {
    "plan": run_plan,
    "track": run_track,
    "bench": run_bench,
    "project": run_project,
}


def main(options: Optional[List[str]] = None) -> None:
    """
    Launch usv-planner.
    """
    argv = options if options is not None else sys.argv[1:]
    args = parse_args(argv)

    if args.version:
        print(f"usv-planner {USV_PLANNER_VERSION}")
        sys.exit(EXIT_OK)

    if args.command is None:
        exit_with_error(
            "No command given.",
            helper_text=f"Choose one of: {', '.join(COMMANDS)}",
            error_code=EXIT_PARSE_FAILURE,
        )

    if args.debug:
        print(
            "NOTE: Debug mode enabled:"
            f"\n  Package details will be logged to"
            f" {in_color('blue', DEBUG_LOG_FILENAME)}"
        )
        debug_handler = logging.FileHandler(DEBUG_LOG_FILENAME)
        debug_handler.setFormatter(
            logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s")
        )
        package_logger.setLevel(logging.DEBUG)
        package_logger.addHandler(debug_handler)

    if args.profile:
        import cProfile

        prof = cProfile.Profile()
        prof.enable()

    exit_code = EXIT_CRASH
    try:
        exit_code = COMMANDS[args.command](args)
    except Exception as e:
        # Acts as separator between logs
        cli_logger.info("\n\n%s\n\n", e)
        cli_logger.exception(e)
        code = exit_code_for(e)
        if code is not None:
            exit_code = code
            print(in_color("red", f"\n{e}"), file=sys.stderr)
        else:
            if args.debug:
                sys.stdout.flush()
                traceback.print_exc(file=sys.stderr)
            print(
                in_color(
                    "red",
                    "\nusv-planner has crashed!"
                    f"\nPlease refer to {TRACEBACK_LOG_FILENAME}"
                    " for full log of the error.",
                ),
                file=sys.stderr,
            )
        sys.stderr.flush()

    finally:
        if args.profile:
            prof.disable()
            import tempfile

            with tempfile.NamedTemporaryFile(
                prefix="usv_planner_profile.", suffix=".dat", delete=False
            ) as profile_file:
                profile_path = profile_file.name
            # Dump stats only after temporary file is closed (for Win NT+ case)
            prof.dump_stats(profile_path)
            print(
                "Profile data saved to {0}.\n"
                "You can visualize it using e.g. `snakeviz {0}`".format(profile_path)
            )

    sys.exit(exit_code)


if __name__ == "__main__":
    main()
