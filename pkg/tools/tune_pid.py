#!/usr/bin/env python3

"""
Coarse grid search over the PID baseline's gains on the obstacle-free
S-curve scenario. The best row is what config/defaults.py freezes.
"""

import argparse
import itertools
import sys
from typing import Dict, List

import pandas as pd

from usvplanner.control import PidConfig, TrackingAborted, run_tracking
from usvplanner.harness import load_scenario
from usvplanner.optimizer import build_reference, trajectory_metrics
from usvplanner.planning.hybrid_astar import SearchOptions, search
from usvplanner.scenarios import scenario_path


HEADING_KP = (20.0, 40.0, 80.0)
HEADING_KD = (10.0, 20.0, 40.0)
SPEED_KP = (75.0, 150.0, 300.0)
LOOKAHEAD = (2.0, 3.0, 5.0)


def parse_args(argv: List[str]) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--scenario", default="s-curve", help="scenario name or file (%(default)s)"
    )
    parser.add_argument(
        "--top", type=int, default=5, help="rows to print (%(default)s)"
    )
    return parser.parse_args(argv)


def main(argv: List[str]) -> None:
    args = parse_args(argv)
    scenario = load_scenario(scenario_path(args.scenario))
    path = search(
        scenario.start,
        scenario.goal,
        scenario.planning_grid,
        opts=SearchOptions(unknown_as_occupied=scenario.unknown_as_occupied),
    )
    reference = build_reference(path, scenario.hull, scenario.cruise_speed)

    rows: List[Dict[str, float]] = []
    base = scenario.pid
    for kp, kd, speed_kp, lookahead in itertools.product(
        HEADING_KP, HEADING_KD, SPEED_KP, LOOKAHEAD
    ):
        config = base._replace(
            heading_gains=(kp, base.heading_gains[1], kd),
            speed_gains=(speed_kp, base.speed_gains[1], base.speed_gains[2]),
            lookahead=lookahead,
        )
        try:
            log = run_tracking(
                reference, scenario.start_state, config, scenario.hull
            )
        except TrackingAborted:
            continue
        metrics = trajectory_metrics(log.executed, reference)
        rows.append(
            {
                "heading_kp": kp,
                "heading_kd": kd,
                "speed_kp": speed_kp,
                "lookahead": lookahead,
                "rmse": metrics["rmse"],
                "max_error": metrics["max_error"],
            }
        )

    if not rows:
        print("Every gain combination diverged", file=sys.stderr)
        sys.exit(1)
    table = pd.DataFrame(rows).sort_values(["rmse", "max_error"])
    print(table.head(args.top).to_string(index=False, float_format="{:.3f}".format))
    best = table.iloc[0]
    tuned = PidConfig(
        heading_gains=(best.heading_kp, base.heading_gains[1], best.heading_kd),
        speed_gains=(best.speed_kp, base.speed_gains[1], base.speed_gains[2]),
        lookahead=best.lookahead,
    )
    print(f"\nPID_HEADING_GAINS = {tuned.heading_gains}")
    print(f"PID_SPEED_GAINS = {tuned.speed_gains}")
    print(f"PID_LOOKAHEAD = {tuned.lookahead}")


if __name__ == "__main__":
    main(sys.argv[1:])
