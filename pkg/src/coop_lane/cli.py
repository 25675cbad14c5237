"""Command-line entry points: solve-c, plan, simulate, sweep.

Exit codes: 0 ok, 2 infeasible, 3 aborted, 4 safety violation, 64 usage, 65 parse.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .core_model import (
    ContractError,
    Infeasible,
    Lane,
    LongitudinalSolution,
    VehicleLimits,
    VehicleState,
)
from .numerics import TranscriptionConfig, transcription_oracle
from .ocp_longitudinal import CWeights, solve_cav_c
from .oracle_specs import cav_c_spec
from .planner import ManeuverPlan, ManeuverProblem, PlanStatus, plan_maneuver
from .sim import Scenario, SimMetrics, run_scenario

log = logging.getLogger("coop_lane")

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_ABORTED = 3
EXIT_VIOLATION = 4
EXIT_USAGE = 64
EXIT_PARSE = 65

# sensitivity grids: parameter points and default run counts per point
GRIDS = {
    "omega": ([{"planner": {"flow": {"omega": w}, "disruption": {"gamma": 0.8, "zeta_C": 0.0,
                                                                "zeta_i": 0.5, "zeta_i1": 0.5}}}
               for w in (0.0, 0.25, 0.5, 0.75, 1.0)], 5),
    "gamma": ([{"planner": {"flow": {"omega": 0.3}, "disruption": {"gamma": g}}}
               for g in (0.0, 0.25, 0.5, 0.75, 1.0)], 5),
    "zeta": ([{"planner": {"flow": {"omega": 0.5},
                           "disruption": {"zeta_i": z1, "zeta_i1": z2, "zeta_C": zc}}}
              for z1, z2, zc in ((0.5, 0.5, 0.0), (0.4, 0.2, 0.4), (0.33, 0.33, 0.34),
                                 (0.0, 0.5, 0.5))], 3),
}

METRIC_COLUMNS = ("throughput", "completed_maneuvers", "aborted_plans", "maneuver_time_mean",
                  "maneuver_time_std", "travel_time_mean", "safety_violations", "plan_overrides",
                  "lateral_clearance_shortfalls", "disruption_mean")


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# config files


def _coerce(default: Any, value: Any, path: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if isinstance(default, (int, float)) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        if isinstance(default, int) and not isinstance(default, bool) and not float(value).is_integer():
            raise ConfigError(f"{path}: expected an integer")
        return type(default)(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    raise ConfigError(f"{path}: unsupported field")


def merge_dataclass(obj: Any, data: dict, path: str = "") -> Any:
    """Return a copy of a frozen dataclass with the given (nested) overrides; unknown keys fail."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown key {where!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            changes[key] = merge_dataclass(current, value, where)
        else:
            changes[key] = _coerce(current, value, where)
    return dataclasses.replace(obj, **changes)


def _deep_update(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _deep_update(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def scenario_from_dict(data: dict) -> Scenario:
    """Scenario from a config document; the planner horizon is copied into the flow window."""
    data = dict(data)
    planner = data.get("planner")
    if isinstance(planner, dict) and "T_max" in planner:
        flow = dict(planner.get("flow") or {})
        flow.setdefault("T_max", planner["T_max"])
        data["planner"] = dict(planner, flow=flow)
    try:
        return merge_dataclass(Scenario(), data)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def read_json(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def load_scenario(path: Optional[str], seed: Optional[int] = None) -> Scenario:
    sc = scenario_from_dict(read_json(path))
    return sc if seed is None else dataclasses.replace(sc, seed=seed)


# ---------------------------------------------------------------------------
# output helpers


def _num(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else "nan"


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _out_dir(path: Optional[str]) -> Path:
    out = Path(path or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def trajectory_rows(sol: LongitudinalSolution, dt: float = 0.01) -> np.ndarray:
    n = max(1, int(math.ceil((sol.tf - sol.t0) / dt - 1e-9)))
    ts = np.linspace(sol.t0, sol.tf, n + 1)
    return np.column_stack([ts, sol.sample(ts)])


def write_solution_csv(path: Path, sol: LongitudinalSolution, dt: float = 0.01):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "v", "u"])
        for row in trajectory_rows(sol, dt):
            w.writerow([_num(c) for c in row])


def write_sim_outputs(out: Path, metrics: SimMetrics, events: list, rows: list):
    with open(out / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "id", "lane", "x", "v", "u", "phase"])
        for t, vid, lane, x, v, u, phase in rows:
            w.writerow([_num(t), vid, lane, _num(x), _num(v), _num(u), phase])
    with open(out / "metrics.json", "w") as fh:
        json.dump(_json_safe(metrics.as_dict()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "events.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "event", "detail"])
        for t, event, detail in events:
            w.writerow([_num(t), event, detail])


def metric_row(m: SimMetrics) -> dict:
    d = m.as_dict()
    row = {k: d[k] for k in METRIC_COLUMNS if k in d}
    row["disruption_mean"] = float(np.mean(m.disruption)) if m.disruption else math.nan
    return row


# ---------------------------------------------------------------------------
# solve-c


def cmd_solve_c(args) -> int:
    sc = load_scenario(args.config, args.seed)
    lim = VehicleLimits(sc.u_min, sc.u_max, sc.v_min, sc.v_max, args.phi, sc.eps)
    c = VehicleState("C", 0.0, args.v_c, Lane.SLOW)
    u = VehicleState("U", args.gap, args.v_u, Lane.SLOW)
    weights = CWeights(args.w_t, args.w_v, args.w_u)
    try:
        sol = solve_cav_c(c, u, args.v_flow, weights, lim, args.t_max)
    except Infeasible as e:
        print(f"infeasible: {e.reason} ({e.detail})")
        return EXIT_INFEASIBLE
    print(f"tf = {sol.tf:.4f} s")
    print(f"v(tf) = {sol.terminal_v:.4f} m/s")
    print(f"x(tf) = {sol.terminal_x:.4f} m")
    print(f"case = {sol.case_label.value}")
    print(f"objective = {sol.objective_value:.6f}")
    if args.oracle:
        spec = cav_c_spec(c, u, args.v_flow, weights.alpha_t, weights.alpha_v, lim, args.t_max)
        orc = transcription_oracle(spec, TranscriptionConfig())
        gap = (sol.objective_value - orc.objective) / max(abs(orc.objective), 1e-12)
        print(f"oracle objective = {orc.objective:.6f} (tf = {orc.tf:.4f} s)")
        print(f"relative gap = {gap:+.4%}")
    out = _out_dir(args.out)
    write_solution_csv(out / "solve_c.csv", sol)
    return EXIT_OK


# ---------------------------------------------------------------------------
# plan


def _state(d: dict, lane: Lane, path: str) -> VehicleState:
    try:
        return VehicleState(str(d["id"]), float(d["x"]), float(d["v"]), lane)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{path}: need id, x, v ({e})") from e


def load_snapshot(path: str, base: VehicleLimits) -> ManeuverProblem:
    """Snapshot document: {"c": {...}, "u": {...}, "fast_lane": [{id, x, v, phi?}], "limits": {...}}."""
    data = read_json(path)
    unknown = set(data) - {"c", "u", "fast_lane", "limits"}
    if unknown:
        raise ConfigError(f"unknown snapshot keys {sorted(unknown)}")
    if "c" not in data or "u" not in data:
        raise ConfigError("snapshot needs c and u")
    try:
        limits = merge_dataclass(base, data.get("limits", {}), "limits")
    except ContractError as e:
        raise ConfigError(str(e)) from e
    per = {}
    fast = []
    for k, d in enumerate(data.get("fast_lane", [])):
        if not isinstance(d, dict):
            raise ConfigError(f"fast_lane[{k}]: expected an object")
        extra = set(d) - {"id", "x", "v", "phi"}
        if extra:
            raise ConfigError(f"fast_lane[{k}]: unknown keys {sorted(extra)}")
        s = _state(d, Lane.FAST, f"fast_lane[{k}]")
        fast.append(s)
        if "phi" in d:
            per[s.id] = dataclasses.replace(limits, phi=float(d["phi"]))
    c = _state(data["c"], Lane.SLOW, "c")
    u = _state(data["u"], Lane.SLOW, "u")
    if len({s.id for s in fast} | {c.id, u.id}) != len(fast) + 2:
        raise ConfigError("vehicle ids must be unique")
    return ManeuverProblem(c, u, tuple(fast), limits, per)


def format_plan(plan: ManeuverPlan) -> str:
    lines = [f"status = {plan.status.value}"]
    if plan.reason:
        lines.append(f"reason = {plan.reason}")
    lines.append(f"v_flow = {plan.v_flow:.4f} m/s")
    lines.append(f"tf* = {plan.tf_star:.4f} s")
    if plan.status != PlanStatus.ABORTED:
        lines += [
            f"pair = {plan.pair_ids[0]},{plan.pair_ids[1]} (slot {plan.pair[0]})",
            f"tf = {plan.tf_final:.4f} s after {plan.relaxations_used} relaxation(s)",
            f"D = {plan.D_value:.6f}",
            f"v_C(tf) = {plan.traj_c.terminal_v:.4f} m/s",
            f"lateral start = {plan.t0_lateral:.4f} s",
        ]
    lines.append("")
    lines.append(f"{'slot':>4} {'front':>10} {'rear':>10} {'ok':>3} {'tf':>8} {'relax':>5} "
                 f"{'D':>10}  reason")
    for ev in plan.evaluations:
        lines.append(f"{ev.index:>4} {ev.front_id:>10} {ev.rear_id:>10} "
                     f"{'yes' if ev.feasible else 'no':>3} {ev.tf:>8.4f} {ev.relaxations:>5} "
                     f"{ev.D:>10.6f}  {ev.reason}")
    return "\n".join(lines)


def write_pairs_csv(path: Path, plan: ManeuverPlan):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "front", "rear", "feasible", "tf", "relaxations", "D", "reason"])
        for ev in plan.evaluations:
            w.writerow([ev.index, ev.front_id, ev.rear_id, int(ev.feasible), _num(ev.tf),
                        ev.relaxations, _num(ev.D), ev.reason])


def cmd_plan(args) -> int:
    sc = load_scenario(args.config, args.seed)
    base = VehicleLimits(sc.u_min, sc.u_max, sc.v_min, sc.v_max, sc.phi_mean, sc.eps)
    problem = load_snapshot(args.snapshot, base)
    try:
        plan = plan_maneuver(problem, sc.planner)
    except ContractError as e:
        raise ConfigError(str(e)) from e
    print(format_plan(plan))
    out = _out_dir(args.out)
    write_pairs_csv(out / "pairs.csv", plan)
    if plan.status == PlanStatus.ABORTED:
        return EXIT_ABORTED
    for name, traj in (("c", plan.traj_c), ("i", plan.traj_i), ("i1", plan.traj_i1)):
        if traj is not None:
            write_solution_csv(out / f"plan_{name}.csv", traj)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate and sweep


def cmd_simulate(args) -> int:
    sc = load_scenario(args.config, args.seed)
    metrics, events, rows = run_scenario(sc, record=True)
    out = _out_dir(args.out)
    write_sim_outputs(out, metrics, events, rows)
    print(json.dumps(_json_safe(metric_row(metrics)), sort_keys=True))
    return EXIT_VIOLATION if metrics.safety_violations > 0 else EXIT_OK


def _run_point(job: tuple) -> tuple:
    k, seed, overrides = job
    sc = dataclasses.replace(scenario_from_dict(overrides), seed=seed)
    metrics, _, _ = run_scenario(sc, record=False)
    return k, seed, metric_row(metrics)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_grid(args, base: dict) -> tuple[list, int]:
    if args.grid_file:
        spec = read_json(args.grid_file)
        unknown = set(spec) - {"points", "runs"}
        if unknown or not isinstance(spec.get("points"), list) or not spec["points"]:
            raise ConfigError("grid file needs a non-empty 'points' list (and optional 'runs')")
        points, runs = spec["points"], spec.get("runs", 1)
    else:
        points, runs = GRIDS[args.grid]
    if args.runs is not None:
        runs = args.runs
    if not isinstance(runs, int) or runs < 1:
        raise ConfigError("runs must be a positive integer")
    merged = [_deep_update(base, p) for p in points]
    for m in merged:
        scenario_from_dict(m)  # validate every point before launching work
    return list(zip(points, merged)), runs


def cmd_sweep(args) -> int:
    base = read_json(args.config)
    scenario_from_dict(base)
    points, runs = load_grid(args, base)
    seed0 = args.seed if args.seed is not None else scenario_from_dict(base).seed
    jobs = [(k, seed0 + r, merged) for k, (_, merged) in enumerate(points) for r in range(runs)]
    workers = args.workers or min(len(jobs), os.cpu_count() or 1)
    if workers <= 1:
        results = [_run_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, jobs))
    # ordered reduction: rows follow (point, seed) regardless of completion order
    results.sort(key=lambda r: (r[0], r[1]))
    keys = sorted({key for p, _ in points for key in _flatten(p)})
    out = _out_dir(args.out)
    violations = 0
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", *keys, "seed", *METRIC_COLUMNS])
        for k, seed, row in results:
            flat = _flatten(points[k][0])
            violations += row["safety_violations"]
            w.writerow([k, *(flat.get(key, "") for key in keys), seed,
                        *(_num(row[c]) if isinstance(row[c], float) else row[c]
                          for c in METRIC_COLUMNS)])
    print(f"{len(results)} runs written to {out / 'sweep.csv'}")
    return EXIT_VIOLATION if violations else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config (Scenario fields plus a 'planner' object)")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--oracle", action="store_true",
                        help="cross-check against the transcription oracle where applicable")

    p = _Parser(prog="coop-lane", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve-c", parents=[common], help="solve the lane-changing vehicle's OCP")
    s.add_argument("--gap", type=float, default=50.0, help="x_U - x_C at t0 (m)")
    s.add_argument("--v-u", type=float, default=16.0)
    s.add_argument("--v-c", type=float, default=23.0)
    s.add_argument("--v-flow", type=float, default=30.0)
    s.add_argument("--w-t", type=float, default=0.55)
    s.add_argument("--w-v", type=float, default=0.5)
    s.add_argument("--w-u", type=float, default=0.02)
    s.add_argument("--phi", type=float, default=0.6, help="headway of C (s)")
    s.add_argument("--t-max", type=float, default=15.0)
    s.set_defaults(func=cmd_solve_c)

    s = sub.add_parser("plan", parents=[common], help="plan one maneuver from a snapshot file")
    s.add_argument("snapshot")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("simulate", parents=[common], help="run one scenario")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", parents=[common], help="run a parameter grid")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--grid", choices=sorted(GRIDS))
    g.add_argument("--grid-file", help="JSON {'points': [config overrides], 'runs': n}")
    s.add_argument("--runs", type=int, help="seeds per point (consecutive from --seed)")
    s.add_argument("--workers", type=int, help="parallel processes")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("COOP_LANE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    if args.oracle and args.command in ("simulate", "sweep"):
        log.warning("--oracle has no effect for %s", args.command)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except ContractError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
