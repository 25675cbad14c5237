"""Fixed-step two-lane simulation with sequential cooperative maneuvers.

The fast lane carries Poisson traffic driven by a linear car-following law.
The slow lane holds one uncontrolled vehicle U and a stream of CAVs behind
it; the CAV directly behind U triggers a maneuver once it is within its
d_start.  Maneuvers run one at a time: the planned arcs are replayed exactly
for C and its cooperating pair (degraded to barrier-capped tracking if a
leader of the pair brakes), then C follows the fast lane through the
lateral phase and joins it.  Every free vehicle runs a linear following law
capped by a barrier on the safety margin.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core_model import (
    Lane,
    LongitudinalSolution,
    VehicleLimits,
    VehicleState,
    eval_trajectory,
    safety_distance,
)
from .flow_sets import FlowParams
from .lateral import solve_lateral
from .planner import ManeuverPlan, ManeuverProblem, PlannerConfig, PlanStatus, plan_maneuver, trigger_check

log = logging.getLogger(__name__)

K_V = 0.6
K_G = 0.2
# decay rate of the safety-margin barrier used on top of the following law
K_BARRIER = 1.0
# the barrier aims this far above the safety distance to absorb the step hold
BARRIER_MARGIN = 0.05
VIOLATION_TOL = 1e-3


@dataclass(frozen=True)
class Scenario:
    segment_length: float = 4000.0
    v_min: float = 10.0
    v_max: float = 35.0
    traffic_rate: float = 3000.0  # fast lane, veh/h
    slow_rate: float = 600.0  # CAVs entering the slow lane, veh/h
    duration: float = 240.0
    window: float = 240.0
    seed: int = 1
    v_u: float = 16.0
    x_u0: float = 150.0
    v_fast: float = 34.0
    v_slow: float = 25.0
    phi_mean: float = 0.6
    phi_std: float = 0.4
    phi_floor: float = 0.1
    d_start_mean: float = 70.0
    d_start_std: float = 10.0
    d_start_floor: float = 20.0
    eps: float = 1.5
    u_min: float = -7.0
    u_max: float = 3.3
    dt: float = 0.05
    cooldown: float = 5.0
    prefill: bool = True
    planner: PlannerConfig = field(default_factory=lambda: default_planner())

    def __post_init__(self):
        if self.traffic_rate < 0 or self.slow_rate < 0:
            raise ValueError("rates must be non-negative")
        if self.dt <= 0 or self.duration <= 0 or self.window <= 0:
            raise ValueError("dt, duration and window must be positive")
        if self.window > self.duration:
            raise ValueError("measurement window longer than the run")
        if not self.v_min < self.v_u < self.v_max:
            raise ValueError("v_u must lie strictly inside the speed range")
        if self.phi_floor <= 0 or self.d_start_floor <= 0 or self.phi_std < 0 or self.d_start_std < 0:
            raise ValueError("truncation floors must be positive and spreads non-negative")


def default_planner() -> PlannerConfig:
    """Planner used by the simulation: shorter horizon, extreme-projection sets, recovery check."""
    return PlannerConfig(T_max=10.0, flow=FlowParams(T_max=10.0, mode="extremes"),
                         recovery_check=True)


@dataclass
class SimMetrics:
    throughput: float
    completed_maneuvers: int
    aborted_plans: int
    maneuver_time_mean: float
    maneuver_time_std: float
    travel_time_mean: float
    safety_violations: int
    plan_overrides: int = 0
    lateral_clearance_shortfalls: int = 0
    disruption: list = field(default_factory=list)
    maneuver_times: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "throughput": self.throughput,
            "completed_maneuvers": self.completed_maneuvers,
            "aborted_plans": self.aborted_plans,
            "maneuver_time_mean": self.maneuver_time_mean,
            "maneuver_time_std": self.maneuver_time_std,
            "travel_time_mean": self.travel_time_mean,
            "safety_violations": self.safety_violations,
            "plan_overrides": self.plan_overrides,
            "lateral_clearance_shortfalls": self.lateral_clearance_shortfalls,
            "disruption": list(self.disruption),
            "maneuver_times": list(self.maneuver_times),
        }


@dataclass
class Vehicle:
    id: str
    lane: Lane
    x: float
    v: float
    limits: VehicleLimits
    kind: str  # "fast", "cav" or "uncontrolled"
    u: float = 0.0
    phase: str = "cruise"
    spawn_t: float = 0.0
    d_start: float = math.inf
    retry_at: float = 0.0
    prefilled: bool = False

    def state(self) -> VehicleState:
        return VehicleState(self.id, self.x, self.v, self.lane)


@dataclass
class ActiveManeuver:
    plan: ManeuverPlan
    t_start: float
    c_id: str
    tracks: dict  # id -> LongitudinalSolution in the maneuver frame
    t_lane_change: float
    t_lateral: float
    degraded: bool = False


@dataclass
class World:
    t: float = 0.0
    vehicles: dict = field(default_factory=dict)
    maneuver: Optional[ActiveManeuver] = None
    crossings: list = field(default_factory=list)
    travel_times: list = field(default_factory=list)
    violations: int = 0
    events: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    disruption: list = field(default_factory=list)
    maneuver_times: list = field(default_factory=list)
    completed: int = 0
    aborted: int = 0
    overrides: int = 0
    lateral_clearance: int = 0
    counter: int = 0

    def log_event(self, event: str, detail: str = ""):
        self.events.append((self.t, event, detail))


def baseline_follow(v: float, limits: VehicleLimits, v_des: float, gap: Optional[float] = None,
                    v_lead: Optional[float] = None) -> float:
    """Linear speed and gap feedback toward min(v_des, v_lead); no leader gives pure speed tracking.

    A positive gap error is capped so that a follower never accelerates
    harder than it would on an empty road.
    """
    if gap is None:
        return min(max(K_V * (v_des - v), limits.u_min), limits.u_max)
    v_ref = v_des if v_lead is None else min(v_des, v_lead)
    err = min(gap - safety_distance(limits, v), K_V / K_G * (v_des - v_ref))
    u = K_V * (v_ref - v) + K_G * err
    return min(max(u, limits.u_min), limits.u_max)


def barrier_cap(v: float, gap: float, v_lead: float, limits: VehicleLimits,
                u_lead: float = 0.0) -> float:
    """Largest control that keeps two safety margins from decaying faster than K_BARRIER * h.

    h1 = gap - delta(v) is the safety distance itself; h2 additionally
    reserves max(v - v_lead, 0)^2 / (2 |u_min|) to cancel a closing speed.
    """
    a = -limits.u_min
    close = max(v - v_lead, 0.0)
    h1 = gap - safety_distance(limits, v) - BARRIER_MARGIN
    h2 = h1 - close * close / (2.0 * a)
    caps = []
    if limits.phi > 0.0:
        # dh1/dt = (v_lead - v) - phi u
        caps.append((v_lead - v + K_BARRIER * h1) / limits.phi)
    gain = limits.phi + close / a
    if gain > 0.0:
        # dh2/dt = (v_lead - v) - phi u - close (u - u_lead) / a
        caps.append((v_lead - v + close * u_lead / a + K_BARRIER * h2) / gain)
    return min(caps) if caps else math.inf


def _advance(x: float, v: float, u: float, dt: float, lim: VehicleLimits) -> tuple[float, float, float]:
    """Exact double-integrator step; u is cut to zero once a speed bound is reached."""
    v_new = v + u * dt
    if v_new > lim.v_max or v_new < lim.v_min:
        bound = lim.v_max if v_new > lim.v_max else lim.v_min
        if u == 0.0:
            return x + v * dt, v, 0.0
        s = min(max((bound - v) / u, 0.0), dt)
        x += v * s + 0.5 * u * s * s
        return x + bound * (dt - s), bound, u if s > 0 else 0.0
    return x + v * dt + 0.5 * u * dt * dt, v_new, u


def _truncated_normal(rng: np.random.Generator, mean: float, std: float, floor: float) -> float:
    for _ in range(1000):
        z = rng.normal(mean, std)
        if z >= floor:
            return float(z)
    return floor


class Simulation:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.rng = np.random.default_rng(scenario.seed)
        self.world = World()
        self.lateral_cache: dict = {}
        self._next_fast = self._draw_arrival(scenario.traffic_rate, 0.0)
        self._next_slow = self._draw_arrival(scenario.slow_rate, 0.0)
        self._pending_fast: list = []
        self._pending_slow: list = []
        self._snapshot: Optional[dict] = None
        self._setup()

    # -- spawning ------------------------------------------------------
    def _draw_arrival(self, rate: float, t: float) -> float:
        if rate <= 0.0:
            return math.inf
        return t + float(self.rng.exponential(3600.0 / rate))

    def _limits(self) -> VehicleLimits:
        sc = self.sc
        phi = _truncated_normal(self.rng, sc.phi_mean, sc.phi_std, sc.phi_floor)
        return VehicleLimits(sc.u_min, sc.u_max, sc.v_min, sc.v_max, phi, sc.eps)

    def _new_id(self, prefix: str) -> str:
        self.world.counter += 1
        return f"{prefix}{self.world.counter}"

    def _setup(self):
        sc, w = self.sc, self.world
        lim_u = VehicleLimits(sc.u_min, sc.u_max, sc.v_min, sc.v_max, sc.phi_mean, sc.eps)
        w.vehicles["U"] = Vehicle("U", Lane.SLOW, sc.x_u0, sc.v_u, lim_u, "uncontrolled",
                                  phase="uncontrolled")
        if sc.prefill and sc.traffic_rate > 0:
            # headways drawn from the same arrival process, laid out front to back
            x = sc.segment_length
            while True:
                x -= sc.v_fast * float(self.rng.exponential(3600.0 / sc.traffic_rate))
                if x < 0.0:
                    break
                lim = self._limits()
                front = self._lane_sorted(Lane.FAST)
                if front and front[-1].x - x < safety_distance(lim, sc.v_fast):
                    continue
                vid = self._new_id("f")
                w.vehicles[vid] = Vehicle(vid, Lane.FAST, x, sc.v_fast, lim, "fast", prefilled=True)

    def _entry_speed(self, lane: Lane, v_des: float, lim: VehicleLimits) -> Optional[float]:
        """Entry speed at x = 0, or None while the entry would break the safety gap."""
        rear = [veh for veh in self._lane_members(lane) if veh.x >= 0.0]
        if not rear:
            return v_des
        last = min(rear, key=lambda veh: veh.x)
        v = min(v_des, last.v)
        return v if last.x >= safety_distance(lim, v) + 1.0 else None

    def _spawn(self):
        sc, w = self.sc, self.world
        while self._next_fast <= w.t:
            self._pending_fast.append(self._limits())
            self._next_fast = self._draw_arrival(sc.traffic_rate, self._next_fast)
        while self._next_slow <= w.t:
            self._pending_slow.append((self._limits(), _truncated_normal(
                self.rng, sc.d_start_mean, sc.d_start_std, sc.d_start_floor)))
            self._next_slow = self._draw_arrival(sc.slow_rate, self._next_slow)
        if self._pending_fast:
            v0 = self._entry_speed(Lane.FAST, sc.v_fast, self._pending_fast[0])
            if v0 is not None:
                lim = self._pending_fast.pop(0)
                vid = self._new_id("f")
                w.vehicles[vid] = Vehicle(vid, Lane.FAST, 0.0, v0, lim, "fast", spawn_t=w.t)
                w.log_event("spawn", f"{vid} fast")
        if self._pending_slow:
            v0 = self._entry_speed(Lane.SLOW, sc.v_slow, self._pending_slow[0][0])
            if v0 is not None:
                lim, d_start = self._pending_slow.pop(0)
                vid = self._new_id("c")
                w.vehicles[vid] = Vehicle(vid, Lane.SLOW, 0.0, v0, lim, "cav", spawn_t=w.t,
                                          d_start=d_start)
                w.log_event("spawn", f"{vid} slow")

    # -- lane bookkeeping ------------------------------------------------
    def _lane_members(self, lane: Lane) -> list:
        return [veh for veh in self.world.vehicles.values() if veh.lane == lane]

    def _lane_sorted(self, lane: Lane) -> list:
        return sorted(self._lane_members(lane), key=lambda veh: (-veh.x, veh.id))

    # -- maneuvers -------------------------------------------------------
    def _lateral_time(self, v: float) -> float:
        key = round(v, 3)
        if key not in self.lateral_cache:
            cfg = replace(self.sc.planner.lateral, v=max(key, 1e-3))
            self.lateral_cache[key] = solve_lateral(cfg).t_f
        return self.lateral_cache[key]

    def _try_trigger(self):
        w, sc = self.world, self.sc
        if w.maneuver is not None:
            return
        slow = self._lane_sorted(Lane.SLOW)
        for lead, c in zip(slow[:-1], slow[1:]):
            if lead.kind != "uncontrolled" or c.kind != "cav" or c.phase != "cruise":
                continue
            if w.t < c.retry_at or not trigger_check(lead.x, c.x, c.d_start):
                continue
            self._plan(c, lead)
            return

    def _plan(self, c: Vehicle, u: Vehicle):
        w, sc = self.world, self.sc
        fast = [veh for veh in self._lane_members(Lane.FAST) if veh.lane == Lane.FAST]
        problem = ManeuverProblem(
            c.state(), u.state(), tuple(veh.state() for veh in fast), c.limits,
            {veh.id: veh.limits for veh in fast} | {c.id: c.limits},
        )
        w.log_event("trigger", f"{c.id} gap={u.x - c.x:.2f}")
        plan = plan_maneuver(problem, sc.planner)
        if plan.status == PlanStatus.ABORTED:
            w.aborted += 1
            c.retry_at = w.t + sc.cooldown
            w.log_event("abort", f"{c.id} {plan.reason}")
            return
        tracks = {c.id: plan.traj_c}
        for vid, traj in zip(plan.pair_ids, (plan.traj_i, plan.traj_i1)):
            if traj is not None:
                tracks[vid] = traj
        t_lat = self._lateral_time(plan.traj_c.terminal_v)
        t_change = w.t + max(plan.tf_final, plan.t0_lateral + t_lat)
        w.maneuver = ActiveManeuver(plan, w.t, c.id, tracks, t_change, w.t + plan.t0_lateral)
        for vid in tracks:
            w.vehicles[vid].phase = "longitudinal"
        w.log_event("plan", f"{c.id} {plan.status.value} pair={plan.pair_ids[0]},{plan.pair_ids[1]} "
                            f"tf={plan.tf_final:.3f} D={plan.D_value:.4f}")

    # -- stepping --------------------------------------------------------
    def _replay(self, veh: Vehicle, traj: LongitudinalSolution, t_rel: float, origin: float):
        x, v, u = eval_trajectory(traj, min(t_rel, traj.tf))
        if t_rel > traj.tf:
            x += v * (t_rel - traj.tf)
            u = 0.0
        veh.x, veh.v, veh.u = origin + x, v, u

    def _leader(self, veh: Vehicle, lane: Lane) -> Optional[Vehicle]:
        snap = self._snapshot
        if snap is not None:
            xs, order = snap[lane]
            k = bisect.bisect_right(xs, veh.x)
            return order[k] if k < len(order) else None
        ahead = [o for o in self._lane_members(lane) if o is not veh and o.x > veh.x]
        return min(ahead, key=lambda o: (o.x, o.id)) if ahead else None

    def _take_snapshot(self):
        """Lanes sorted by (x, id); valid while positions are frozen within a step."""
        self._snapshot = {}
        for lane in (Lane.FAST, Lane.SLOW):
            order = sorted(self._lane_members(lane), key=lambda o: (o.x, o.id))
            self._snapshot[lane] = ([o.x for o in order], order)

    def _follow(self, veh: Vehicle, v_des: float, lanes) -> float:
        """Following law toward v_des, capped by the barrier against the leader in each lane."""
        leaders = [ld for ld in (self._leader(veh, lane) for lane in lanes) if ld is not None]
        if not leaders:
            return baseline_follow(veh.v, veh.limits, v_des)
        near = min(leaders, key=lambda o: o.x)
        u = baseline_follow(veh.v, veh.limits, v_des, near.x - veh.x, near.v)
        for ld in leaders:
            u = min(u, barrier_cap(veh.v, ld.x - veh.x, ld.v, veh.limits, ld.u))
        return max(u, veh.limits.u_min)

    def _plan_control(self, m: ActiveManeuver, vid: str, t_rel: float) -> float:
        traj = m.tracks[vid]
        return eval_trajectory(traj, min(max(t_rel, traj.t0), traj.tf))[2]

    def _supervise(self):
        """Switch the maneuver to degraded execution when a plan would erode a real gap.

        The plan assumed the leader of i* cruises; a braking leader voids that.
        In degraded execution every cooperating vehicle integrates
        min(u_plan, barrier caps), with i* a virtual leader of C and C a virtual
        leader of i*+1, so all three stay as close to the plan as safety allows.
        """
        w = self.world
        m = w.maneuver
        if m is None or m.degraded:
            return
        t_rel = w.t - m.t_start
        for vid in m.tracks:
            veh = w.vehicles[vid]
            if vid == m.c_id or veh.phase != "longitudinal":
                continue
            lead = self._leader(veh, Lane.FAST)
            if lead is None or lead.id in m.tracks:
                continue
            if self._plan_control(m, vid, t_rel) > barrier_cap(veh.v, lead.x - veh.x, lead.v,
                                                                veh.limits, lead.u) + 1e-9:
                m.degraded = True
                w.overrides += 1
                w.log_event("override", f"{vid} behind {lead.id}")
                return

    def _degraded_control(self, m: ActiveManeuver, vid: str) -> float:
        w = self.world
        veh = w.vehicles[vid]
        u = self._plan_control(m, vid, w.t - m.t_start)
        leaders = [self._leader(veh, veh.lane)]
        front_id, rear_id = m.plan.pair_ids
        if vid == m.c_id and front_id in m.tracks:
            leaders.append(w.vehicles[front_id])
        elif vid == rear_id:
            leaders.append(w.vehicles[m.c_id])
        for ld in leaders:
            if ld is not None and ld.x > veh.x:
                u = min(u, barrier_cap(veh.v, ld.x - veh.x, ld.v, veh.limits, ld.u))
        return max(u, veh.limits.u_min)

    def _controls(self) -> dict:
        sc, w = self.sc, self.world
        m = w.maneuver
        out = {}
        for vid, veh in w.vehicles.items():
            if veh.phase == "cruise":
                v_des = sc.v_fast if veh.lane == Lane.FAST else sc.v_slow
                out[vid] = self._follow(veh, v_des, (veh.lane,))
            elif m is not None and m.degraded and vid in m.tracks and veh.phase == "longitudinal":
                out[vid] = self._degraded_control(m, vid)
            elif veh.phase == "lateral":
                # speed is held through the lateral phase unless the barrier asks for braking
                lead = self._leader(veh, Lane.FAST)
                u = 0.0
                if lead is not None:
                    u = min(u, barrier_cap(veh.v, lead.x - veh.x, lead.v, veh.limits, lead.u))
                out[vid] = max(u, veh.limits.u_min)
        return out

    def _check_safety(self):
        w = self.world
        for lane in (Lane.FAST, Lane.SLOW):
            ordered = self._lane_sorted(lane)
            for lead, fol in zip(ordered[:-1], ordered[1:]):
                short = safety_distance(fol.limits, fol.v) - (lead.x - fol.x)
                if short > VIOLATION_TOL:
                    w.violations += 1
                    w.log_event("violation", f"{lead.id}>{fol.id} short={short:.3f}")

    def step(self):
        sc, w = self.sc, self.world
        t_end = round(w.t + sc.dt, 10)
        m = w.maneuver
        if m is not None:
            # split the step at the end of the longitudinal phase so the
            # cooperating vehicles hand over to feedback at exactly tf
            t_tf = m.t_start + m.plan.tf_final
            if w.t < t_tf < t_end - 1e-9:
                self._advance_all(t_tf - w.t)
                w.t = t_tf
                self._progress(m)
        self._advance_all(t_end - w.t)
        w.t = t_end
        if w.maneuver is not None:
            self._progress(w.maneuver)
        for vid in [vid for vid, veh in w.vehicles.items() if veh.x > sc.segment_length]:
            if w.maneuver is not None and vid in w.maneuver.tracks:
                continue
            w.log_event("exit", vid)
            del w.vehicles[vid]
        self._check_safety()
        self._spawn()
        self._try_trigger()

    def _advance_all(self, h: float):
        sc, w = self.sc, self.world
        if h <= 0.0:
            return
        self._take_snapshot()
        self._supervise()
        controls = self._controls()
        self._snapshot = None
        m = w.maneuver
        t_new = w.t + h
        for vid, veh in w.vehicles.items():
            x_old = veh.x
            if veh.phase == "uncontrolled":
                veh.x, veh.u = veh.x + veh.v * h, 0.0
            elif m is not None and not m.degraded and vid in m.tracks and veh.phase == "longitudinal":
                self._replay(veh, m.tracks[vid], t_new - m.t_start, m.plan.origin)
            else:
                veh.x, veh.v, veh.u = _advance(veh.x, veh.v, controls.get(vid, 0.0), h, veh.limits)
            if x_old < sc.segment_length <= veh.x:
                w.crossings.append((t_new, vid))
                if not veh.prefilled:
                    w.travel_times.append(t_new - veh.spawn_t)

    def _progress(self, m: ActiveManeuver):
        """End of the longitudinal phase moves C into the fast lane; the lateral phase follows."""
        w, sc = self.world, self.sc
        t_rel = w.t - m.t_start
        c = w.vehicles[m.c_id]
        if t_rel >= m.plan.tf_final - 1e-9:
            for vid in m.tracks:
                veh = w.vehicles[vid]
                if veh.phase == "longitudinal":
                    veh.phase = "lateral" if vid == m.c_id else "cruise"
            if c.lane == Lane.SLOW:
                c.lane, c.kind = Lane.FAST, "fast"
        if c.phase == "lateral":
            u = w.vehicles.get("U")
            if u is not None and 0.0 < u.x - c.x < sc.planner.lateral.eps_v:
                w.lateral_clearance += 1
                w.log_event("lateral_clearance", f"{c.id} gap={u.x - c.x:.3f}")
        if c.phase == "lateral" and w.t >= m.t_lane_change - 1e-9:
            c.phase = "cruise"
            w.completed += 1
            w.disruption.append(m.plan.D_value)
            w.maneuver_times.append(m.plan.tf_final)
            w.maneuver = None
            w.log_event("lane_change", c.id)

    def record(self):
        w = self.world
        for vid in sorted(w.vehicles):
            veh = w.vehicles[vid]
            w.rows.append((w.t, vid, veh.lane.value, veh.x, veh.v, veh.u, veh.phase))

    def run(self, record: bool = True) -> SimMetrics:
        sc, w = self.sc, self.world
        n = int(round(sc.duration / sc.dt))
        if record:
            self.record()
        for _ in range(n):
            self.step()
            if record:
                self.record()
        return self.metrics()

    def metrics(self) -> SimMetrics:
        sc, w = self.sc, self.world
        t_lo = sc.duration - sc.window
        count = sum(1 for t, _ in w.crossings if t > t_lo)
        times = np.asarray(w.maneuver_times, dtype=float)
        return SimMetrics(
            throughput=count * 3600.0 / sc.window,
            completed_maneuvers=w.completed,
            aborted_plans=w.aborted,
            maneuver_time_mean=float(times.mean()) if times.size else math.nan,
            maneuver_time_std=float(times.std()) if times.size else math.nan,
            travel_time_mean=float(np.mean(w.travel_times)) if w.travel_times else math.nan,
            safety_violations=w.violations,
            plan_overrides=w.overrides,
            lateral_clearance_shortfalls=w.lateral_clearance,
            disruption=list(w.disruption),
            maneuver_times=list(w.maneuver_times),
        )


def step_simulation(sim: Simulation, dt: Optional[float] = None) -> Simulation:
    """Advance the world by one step (dt must match the scenario step)."""
    if dt is not None and abs(dt - sim.sc.dt) > 1e-12:
        raise ValueError("step size is fixed by the scenario")
    sim.step()
    return sim


def run_scenario(scenario: Scenario, record: bool = True) -> tuple[SimMetrics, list, list]:
    """Run to completion; returns metrics, the event log and the trajectory rows."""
    sim = Simulation(scenario)
    metrics = sim.run(record)
    return metrics, sim.world.events, sim.world.rows
