from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pytest
from pytest import CaptureFixture
from pytest import param as case
from pytest_mock import MockerFixture

from usvplanner.cli.run import (
    exit_code_for,
    exit_with_error,
    in_color,
    main,
    parse_args,
)
from usvplanner.control import TrackingAborted, TrackingLog
from usvplanner.datatypes import PlannedPath, Trajectory
from usvplanner.fileio import FileFormatError, read_grid, write_pgm
from usvplanner.harness import (
    ScenarioError,
    StageFailure,
    VariantMetrics,
    VariantOutcome,
)
from usvplanner.mapping import SegMask
from usvplanner.optimizer import InvalidReference, TrajectoryCollision
from usvplanner.planning.hybrid_astar import NoPathFound
from usvplanner.version import USV_PLANNER_VERSION


MODULE = "usvplanner.cli.run"

CAMERA_FILE = """\
[intrinsics]
fx = 100
fy = 100
cx = 50
cy = 40
width = 100
height = 80

[pose]
rotation = 1, 0, 0, 0, -1, 0, 0, 0, -1
translation = -10, 5, 20
"""


@pytest.fixture(autouse=True)
def quiet_traceback_log(mocker: MockerFixture) -> None:
    mocker.patch(MODULE + ".cli_logger")


@pytest.fixture
def scenario_arg(scenario_file: Callable[..., Path]) -> str:
    return str(scenario_file())


@pytest.fixture
def planned_outcome(
    straight_path: PlannedPath, straight_reference: Trajectory
) -> VariantOutcome:
    ticks = straight_reference.knot_count - 1
    log = TrackingLog(
        straight_reference.with_provenance("executed"),
        np.arange(ticks),
        np.full(ticks, 0.002),
        np.zeros(ticks, dtype=bool),
        0,
        False,
    )
    metrics = VariantMetrics(
        generated_length=20.0,
        executed_length=19.5,
        rmse=0.125,
        max_error=0.5,
        mean_speed=0.9,
        duration=straight_reference.duration,
        replans=0,
        planning_s=1.5,
        control_ms=2.0,
        overruns=0,
    )
    return VariantOutcome("GOP+LOP", straight_path, straight_reference, log, metrics)


@pytest.mark.parametrize(
    "color, code",
    [
        ("red", "\x1b[91m"),
        ("green", "\x1b[92m"),
        ("yellow", "\x1b[93m"),
        ("blue", "\x1b[94m"),
        ("purple", "\x1b[95m"),
        ("cyan", "\x1b[96m"),
    ],
)
def test_in_color(color: str, code: str, text: str = "some text") -> None:
    assert in_color(color, text) == code + text + "\x1b[0m"


@pytest.mark.parametrize(
    "error, code",
    [
        case(FileFormatError("hull.ini", "bad"), 2, id="file_format"),
        case(ScenarioError("map", "width", "is required"), 2, id="scenario"),
        case(NoPathFound(40), 3, id="no_path"),
        case(StageFailure("plan", NoPathFound(40)), 3, id="plan_stage"),
        case(InvalidReference("empty path"), 4, id="invalid_reference"),
        case(TrajectoryCollision(3, 1.0, 2.0), 5, id="collision"),
        case(
            StageFailure("safety", TrajectoryCollision(3, 1.0, 2.0)),
            5,
            id="safety_stage",
        ),
        case(TrackingAborted("vessel left the map"), 5, id="tracking_aborted"),
        case(RuntimeError("boom"), None, id="crash"),
    ],
)
def test_exit_code_for(error: BaseException, code: Optional[int]) -> None:
    assert exit_code_for(error) == code


def test_exit_with_error(capsys: CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit) as e:
        exit_with_error("Bad thing", helper_text="Try this", error_code=3)

    assert e.value.code == 3
    captured = capsys.readouterr()
    assert captured.out == in_color("red", "Bad thing") + "\nTry this\n"


@pytest.mark.parametrize("options", ["-h", "--help"])
def test_main_help(capsys: CaptureFixture[str], options: str) -> None:
    with pytest.raises(SystemExit):
        main([options])

    lines = capsys.readouterr().out.strip().split("\n")

    assert lines[0].startswith("usage: ")
    text = "\n".join(lines)
    for expected in ("-v, --version", "-d, --debug", "--profile", "plan", "bench"):
        assert expected in text


@pytest.mark.parametrize("options", ["-v", "--version"])
def test_main_version(capsys: CaptureFixture[str], options: str) -> None:
    with pytest.raises(SystemExit) as e:
        main([options])

    assert e.value.code == 0
    assert capsys.readouterr().out == f"usv-planner {USV_PLANNER_VERSION}\n"


def test_main__no_command(capsys: CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit) as e:
        main([])

    assert e.value.code == 2
    assert "No command given." in capsys.readouterr().out


def test_parse_args__defaults(scenario_arg: str) -> None:
    args = parse_args(["plan", scenario_arg])

    assert args.variant == "GOP+LOP"
    assert args.svg
    assert args.out_dir == Path(".")
    assert not args.full_size
    assert args.seed is None


def test_parse_args__unknown_variant(scenario_arg: str) -> None:
    with pytest.raises(SystemExit):
        parse_args(["bench", scenario_arg, "--variants", "GOP+LOP", "FAST"])


def test_main_plan(
    mocker: MockerFixture,
    capsys: CaptureFixture[str],
    scenario_arg: str,
    planned_outcome: VariantOutcome,
    tmp_path: Path,
) -> None:
    run_variant = mocker.patch(MODULE + ".run_variant", return_value=planned_outcome)
    out_dir = tmp_path / "out"

    with pytest.raises(SystemExit) as e:
        main(["plan", scenario_arg, "--out-dir", str(out_dir), "--seed", "3"])

    assert e.value.code == 0
    assert run_variant.call_args[0][0].seed == 3
    assert run_variant.call_args[0][1] == "GOP+LOP"
    assert sorted(path.name for path in out_dir.iterdir()) == [
        "minimal_GOP_LOP.svg",
        "minimal_GOP_LOP_executed.csv",
        "minimal_GOP_LOP_path.csv",
        "minimal_GOP_LOP_trajectory.csv",
    ]
    out = capsys.readouterr().out
    assert "scenario.seed '3' specified on command line." in out
    assert "tracking RMSE (m): 0.125" in out


@pytest.mark.parametrize(
    "error, code",
    [
        case(StageFailure("plan", NoPathFound(12)), 3, id="planning"),
        case(StageFailure("optimize", InvalidReference("blocked")), 4, id="solver"),
        case(StageFailure("track", TrackingAborted("left the map")), 5, id="tracking"),
    ],
)
def test_main_plan__stage_failure(
    mocker: MockerFixture,
    capsys: CaptureFixture[str],
    scenario_arg: str,
    tmp_path: Path,
    error: StageFailure,
    code: int,
) -> None:
    mocker.patch(MODULE + ".run_variant", side_effect=error)

    with pytest.raises(SystemExit) as e:
        main(["plan", scenario_arg, "--out-dir", str(tmp_path)])

    assert e.value.code == code
    assert str(error) in capsys.readouterr().err
    assert not list(tmp_path.glob("*.csv"))


def test_main__crash(
    mocker: MockerFixture,
    capsys: CaptureFixture[str],
    scenario_arg: str,
    tmp_path: Path,
) -> None:
    mocker.patch(MODULE + ".run_variant", side_effect=RuntimeError("boom"))

    with pytest.raises(SystemExit) as e:
        main(["plan", scenario_arg, "--out-dir", str(tmp_path)])

    assert e.value.code == 1
    assert "usv-planner has crashed!" in capsys.readouterr().err


def test_main__bad_scenario(
    capsys: CaptureFixture[str],
    scenario_file: Callable[..., Path],
    minimal_scenario_text: str,
) -> None:
    path = scenario_file(minimal_scenario_text.replace("width = 40", "width = wide"))

    with pytest.raises(SystemExit) as e:
        main(["plan", str(path)])

    assert e.value.code == 2
    assert "[map] width: must be numeric" in capsys.readouterr().err


def test_main_bench__exit_code_of_first_failure(
    mocker: MockerFixture,
    capsys: CaptureFixture[str],
    scenario_arg: str,
    planned_outcome: VariantOutcome,
    tmp_path: Path,
) -> None:
    def run(scenario: object, tag: str) -> VariantOutcome:
        if tag == "GOP+LP":
            raise StageFailure("optimize", InvalidReference("goal blocked"))
        return planned_outcome._replace(tag=tag)

    mocker.patch("usvplanner.harness.run_variant", side_effect=run)
    out_dir = tmp_path / "bench"

    with pytest.raises(SystemExit) as e:
        main(
            [
                "bench",
                scenario_arg,
                "--variants",
                "GOP+LP",
                "GOP+LOP",
                "--out-dir",
                str(out_dir),
                "--no-svg",
            ]
        )

    assert e.value.code == 4
    assert (out_dir / "minimal_ablation.csv").exists()
    assert not (out_dir / "minimal_ablation.svg").exists()
    out = capsys.readouterr().out
    assert "failed (optimize)" in out
    assert "GOP+LP: optimize stage failed: goal blocked" in out


def test_main_project(capsys: CaptureFixture[str], tmp_path: Path) -> None:
    bits = np.zeros((80, 100), dtype=bool)
    bits[30:50, 40:60] = True
    write_pgm(tmp_path / "mask.pgm", SegMask(bits))
    (tmp_path / "camera.ini").write_text(CAMERA_FILE)
    out = tmp_path / "grids" / "view.grid"

    with pytest.raises(SystemExit) as e:
        main(
            [
                "project",
                "--mask",
                str(tmp_path / "mask.pgm"),
                "--camera",
                str(tmp_path / "camera.ini"),
                "--out",
                str(out),
            ]
        )

    assert e.value.code == 0
    assert read_grid(out).occupied_count() > 0
    assert out.with_suffix(".svg").exists()
    assert "Projected 100x80 mask onto" in capsys.readouterr().out


def test_main_project__mask_size_mismatch(
    capsys: CaptureFixture[str], tmp_path: Path
) -> None:
    write_pgm(tmp_path / "mask.pgm", SegMask(np.zeros((10, 10), dtype=bool)))
    (tmp_path / "camera.ini").write_text(CAMERA_FILE)

    with pytest.raises(SystemExit) as e:
        main(
            [
                "project",
                "--mask",
                str(tmp_path / "mask.pgm"),
                "--camera",
                str(tmp_path / "camera.ini"),
                "--out",
                str(tmp_path / "view.grid"),
            ]
        )

    assert e.value.code == 2
    assert "mask is 10x10" in capsys.readouterr().err
