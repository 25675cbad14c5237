"""Run the default 240 s scenario for a few seeds and print the headline metrics."""

import argparse
import time

from coop_lane.sim import Scenario, run_scenario


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--rate", type=float, default=3000.0, help="fast-lane traffic (veh/h)")
    args = p.parse_args()

    print(f"{'seed':>4} {'thru':>6} {'done':>4} {'abort':>5} {'t_man':>7} {'viol':>4} {'maxD':>7} {'wall':>6}")
    for seed in args.seeds:
        t = time.perf_counter()
        m, _, _ = run_scenario(Scenario(traffic_rate=args.rate, seed=seed), record=False)
        print(f"{seed:>4} {m.throughput:>6.0f} {m.completed_maneuvers:>4} {m.aborted_plans:>5} "
              f"{m.maneuver_time_mean:>7.3f} {m.safety_violations:>4} {max(m.disruption, default=0):>7.4f} "
              f"{time.perf_counter() - t:>6.1f}")


if __name__ == "__main__":
    main()
