"""Plan one maneuver on the four-vehicle snapshot and print the per-slot disruption table."""

from pathlib import Path

from coop_lane.cli import format_plan, load_scenario, load_snapshot
from coop_lane.core_model import VehicleLimits
from coop_lane.planner import plan_maneuver

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    sc = load_scenario(str(CONFIGS / "plan_fixture.json"))
    problem = load_snapshot(str(CONFIGS / "snapshot_four.json"), VehicleLimits())
    print(format_plan(plan_maneuver(problem, sc.planner)))


if __name__ == "__main__":
    main()
