"""Compare analytic and transcription-oracle objectives on seeded random instances."""

import argparse
import time

from coop_lane.instances import GENERATORS, compare_feasible


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=20, help="feasible instances per problem")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kinds", nargs="+", default=sorted(GENERATORS), choices=sorted(GENERATORS))
    args = p.parse_args()

    total_bad = 0
    t0 = time.perf_counter()
    for kind in args.kinds:
        t = time.perf_counter()
        rows = compare_feasible(kind, args.n, args.seed)
        bad = [r for r in rows if not r.ok]
        total_bad += len(bad)
        print(f"{kind:14s} {len(rows) - len(bad):3d}/{len(rows)} ok  {time.perf_counter() - t:6.1f} s")
        for r in bad:
            print(f"    {r.label}: analytic {r.analytic:.6g} oracle {r.oracle:.6g} {r.reason}")
    print(f"total {time.perf_counter() - t0:.1f} s, {total_bad} mismatches")
    return 1 if total_bad else 0


if __name__ == "__main__":
    raise SystemExit(main())
