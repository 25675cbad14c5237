"""One cooperative maneuver: solve C, score every candidate pair, relax time, pick the pair."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

from .core_model import (
    ContractError,
    Infeasible,
    LongitudinalSolution,
    VehicleLimits,
    VehicleState,
    check_safety_constraints,
    constant_speed_solution,
)
from .disruption import DisruptionParams, total_disruption, vehicle_disruption
from .flow_sets import (
    CandidateSet,
    FlowParams,
    build_candidate_set,
    build_extreme_set,
    flow_speed,
)
from .lateral import LateralConfig, lateral_start_time, safe_times
from .ocp_longitudinal import (
    CWeights,
    TrackingWeights,
    solve_cav_c,
    solve_cav_c_relaxed,
    solve_tracking_i,
    solve_tracking_i1,
)

log = logging.getLogger(__name__)


class PlanStatus(str, Enum):
    PLANNED = "Planned"
    ABORTED = "Aborted"
    SELFISH = "SelfishFallback"


@dataclass(frozen=True)
class PlannerConfig:
    lambda_tf: float = 1.1
    max_relaxations: int = 10
    d_start: float = 70.0
    T_max: float = 15.0
    c_weights: CWeights = field(default_factory=CWeights)
    tracking: TrackingWeights = field(default_factory=TrackingWeights)
    flow: FlowParams = field(default_factory=FlowParams)
    disruption: DisruptionParams = field(default_factory=DisruptionParams)
    lateral: LateralConfig = field(default_factory=LateralConfig)
    selfish_fallback: bool = False
    # reject merges whose terminal closing speed braking cannot absorb
    recovery_check: bool = False

    def __post_init__(self):
        if not self.lambda_tf > 1.0:
            raise ContractError("lambda_tf must exceed 1")
        if self.max_relaxations < 0:
            raise ContractError("max_relaxations must be non-negative")
        if abs(self.flow.T_max - self.T_max) > 1e-12:
            raise ContractError("flow.T_max and T_max disagree")


@dataclass(frozen=True)
class ManeuverProblem:
    """Snapshot at the trigger time, in road coordinates."""

    c: VehicleState
    u: VehicleState
    fast_lane: tuple[VehicleState, ...]
    limits: VehicleLimits = field(default_factory=VehicleLimits)
    vehicle_limits: Mapping[str, VehicleLimits] = field(default_factory=dict)

    def limits_of(self, vid: str) -> VehicleLimits:
        return self.vehicle_limits.get(vid, self.limits)


@dataclass
class PairEvaluation:
    index: int
    front_id: str
    rear_id: str
    feasible: bool
    tf: float
    relaxations: int
    D: float = math.nan
    reason: str = ""
    traj_c: Optional[LongitudinalSolution] = None
    traj_i: Optional[LongitudinalSolution] = None
    traj_i1: Optional[LongitudinalSolution] = None
    D_parts: tuple = ()


@dataclass
class ManeuverPlan:
    status: PlanStatus
    pair: Optional[tuple[int, int]] = None
    pair_ids: Optional[tuple[str, str]] = None
    tf_star: float = math.nan
    tf_final: float = math.nan
    relaxations_used: int = 0
    traj_c: Optional[LongitudinalSolution] = None
    traj_i: Optional[LongitudinalSolution] = None
    traj_i1: Optional[LongitudinalSolution] = None
    D_value: float = math.nan
    v_flow: float = math.nan
    origin: float = 0.0
    t0_lateral: float = math.nan
    reason: str = ""
    candidate_set: Optional[CandidateSet] = None
    evaluations: list = field(default_factory=list)


def trigger_check(x_u: float, x_c: float, d_start: float) -> bool:
    if x_u < x_c:
        raise ContractError("U must be ahead of C")
    return x_u - x_c <= d_start


def _shift(s: VehicleState, origin: float) -> VehicleState:
    return VehicleState(s.id, s.x - origin, s.v, s.lane)


def _leader_of(state: VehicleState, lane: Sequence[VehicleState]) -> Optional[VehicleState]:
    ahead = [s for s in lane if s.x > state.x]
    return min(ahead, key=lambda s: (s.x, s.id)) if ahead else None


def _disruption_of(sol: LongitudinalSolution, state: VehicleState, v_flow: float,
                   params: DisruptionParams, lim: VehicleLimits) -> float:
    return vehicle_disruption(sol.terminal_x, sol.terminal_v, sol.tf, state.x, state.v, sol.t0,
                              v_flow, params, lim)


def _check_recovery(traj_c, traj_i, traj_i1, lim_c, lim_i1):
    """After tf each follower must be able to hold its gap by braking alone.

    With the gap at the safety distance, h = gap - delta(v) stays non-negative
    under full braking iff the closing speed is at most phi * |u_min|.
    """
    vc = traj_c.terminal_v
    if traj_i1 is not None and traj_i1.terminal_v - vc > lim_i1.phi * -lim_i1.u_min + 1e-9:
        raise Infeasible("recovery", "i+1 closes on C faster than it can brake")
    if traj_i is not None and vc - traj_i.terminal_v > lim_c.phi * -lim_c.u_min + 1e-9:
        raise Infeasible("recovery", "C closes on i faster than it can brake")


def evaluate_pair(k: int, traj_c: LongitudinalSolution, cset: CandidateSet,
                  problem: ManeuverProblem, lane: Sequence[VehicleState], v_flow: float,
                  config: PlannerConfig) -> PairEvaluation:
    """Solve the two cooperating vehicles for merge slot k and score the triplet.

    All states are in the maneuver frame (C at the origin).  Raises Infeasible
    with the failing step as reason.
    """
    tf = traj_c.tf
    c = problem.c
    lim_c = problem.limits_of(c.id)
    xc, vc = traj_c.terminal_x, traj_c.terminal_v
    front, rear = cset.states[k], cset.states[k + 1]
    ev = PairEvaluation(k, front.id, rear.id, False, tf, 0, traj_c=traj_c)
    w = config.tracking
    traj_i = traj_i1 = None
    if not cset.is_virtual(k):
        lim_i = problem.limits_of(front.id)
        leader = _leader_of(front, lane)
        traj_i = solve_tracking_i(front, xc, vc, tf, w, lim_i, v_flow, leader, lim_c)
    if not cset.is_virtual(k + 1):
        traj_i1 = solve_tracking_i1(rear, xc, vc, tf, w, problem.limits_of(rear.id), v_flow)
    lim_i1 = problem.limits_of(rear.id) if traj_i1 is not None else lim_c
    traj_u = constant_speed_solution(problem.u.x, problem.u.v, traj_c.t0, tf)
    report = check_safety_constraints(traj_c, traj_u, traj_i, traj_i1, lim_c, lim_i1)
    if not report:
        raise Infeasible("safety", f"constraint ({report.constraint}) at t={report.t:.3f}")
    if config.recovery_check:
        _check_recovery(traj_c, traj_i, traj_i1, lim_c, lim_i1)
    params = config.disruption
    d_c = _disruption_of(traj_c, c, v_flow, params, lim_c)
    d_i = 0.0 if traj_i is None else _disruption_of(traj_i, front, v_flow, params,
                                                     problem.limits_of(front.id))
    d_i1 = 0.0 if traj_i1 is None else _disruption_of(traj_i1, rear, v_flow, params, lim_i1)
    ev.feasible = True
    ev.traj_i, ev.traj_i1 = traj_i, traj_i1
    ev.D_parts = (d_c, d_i, d_i1)
    ev.D = total_disruption(d_c, d_i, d_i1, params)
    return ev


def _relaxed_c(c, u, v_flow, tf, config, lim_c):
    return solve_cav_c_relaxed(c, u, v_flow, tf, config.tracking, lim_c)


def _pair_search(k, tf_star, sol_c, cset, local, lane, v_flow, config, D_th):
    """Walk the relaxation ladder for one pair.

    Returns the first evaluation meeting D <= D_th and the first safe one (any D).
    """
    c, u = local.c, local.u
    lim_c = local.limits_of(c.id)
    tf, traj_c = tf_star, sol_c
    first_safe = None
    last = None
    for r in range(config.max_relaxations + 1):
        if r > 0:
            tf = tf_star * config.lambda_tf**r
            if tf > config.T_max + 1e-9:
                break
            try:
                traj_c = _relaxed_c(c, u, v_flow, tf, config, lim_c)
            except Infeasible as e:
                last = PairEvaluation(k, cset.ordered[k], cset.ordered[k + 1], False, tf, r,
                                      reason=f"C:{e.reason}")
                continue
        try:
            ev = evaluate_pair(k, traj_c, cset, local, lane, v_flow, config)
        except Infeasible as e:
            last = PairEvaluation(k, cset.ordered[k], cset.ordered[k + 1], False, tf, r,
                                  reason=e.reason)
            continue
        ev.relaxations = r
        if first_safe is None:
            first_safe = ev
        if ev.D <= D_th:
            return ev, first_safe
        last = PairEvaluation(k, ev.front_id, ev.rear_id, False, tf, r, D=ev.D,
                              reason="threshold")
    return last, first_safe


def select_pair(evaluations: Sequence[PairEvaluation], D_th: float) -> Optional[PairEvaluation]:
    """Feasible pair of least disruption within the threshold; ties go to the front-most slot."""
    ok = [e for e in evaluations if e.feasible and e.D <= D_th]
    return min(ok, key=lambda e: (e.D, e.index)) if ok else None


def plan_maneuver(problem: ManeuverProblem, config: PlannerConfig = PlannerConfig()) -> ManeuverPlan:
    origin = problem.c.x
    lane_local = tuple(_shift(s, origin) for s in problem.fast_lane)
    local = ManeuverProblem(_shift(problem.c, origin), _shift(problem.u, origin), lane_local,
                            problem.limits, problem.vehicle_limits)
    c, u = local.c, local.u
    lim_c = local.limits_of(c.id)
    cset = build_candidate_set(lane_local, c.x, u.x, u.v, config.flow, lim_c.v_min)
    v_flow = flow_speed(cset, config.flow)
    plan = ManeuverPlan(PlanStatus.ABORTED, v_flow=v_flow, origin=origin, candidate_set=cset)
    if u.v >= v_flow:
        plan.reason = "no-gain"
        return plan
    try:
        sol_c = solve_cav_c(c, u, v_flow, config.c_weights, lim_c, config.T_max)
    except (Infeasible, ContractError) as e:
        plan.reason = getattr(e, "reason", "contract")
        return plan
    plan.tf_star = sol_c.tf
    if config.flow.mode == "extremes":
        cset = build_extreme_set(lane_local, sol_c.terminal_x, u.x + u.v * sol_c.tf, sol_c.tf,
                                 config.flow, lim_c)
        plan.candidate_set = cset

    D_th = config.disruption.D_th
    accepted: list[PairEvaluation] = []
    safe: list[PairEvaluation] = []
    for k, _ in cset.pairs:
        ev, first_safe = _pair_search(k, sol_c.tf, sol_c, cset, local, lane_local, v_flow,
                                      config, D_th)
        if ev is not None:
            plan.evaluations.append(ev)
            if ev.feasible:
                accepted.append(ev)
        if first_safe is not None:
            safe.append(first_safe)

    best = select_pair(accepted, D_th)
    if best is not None:
        status = PlanStatus.PLANNED
    elif config.selfish_fallback and safe:
        best = min(safe, key=lambda e: (e.tf, e.D, e.index))
        status = PlanStatus.SELFISH
    else:
        plan.reason = "no-feasible-pair"
        return plan
    plan.status = status
    plan.pair = (best.index, best.index + 1)
    plan.pair_ids = (best.front_id, best.rear_id)
    plan.tf_final = best.tf
    plan.relaxations_used = best.relaxations
    plan.traj_c, plan.traj_i, plan.traj_i1 = best.traj_c, best.traj_i, best.traj_i1
    plan.D_value = best.D
    traj_u = constant_speed_solution(u.x, u.v, 0.0, best.tf)
    taus = safe_times(best.traj_c, best.traj_i, best.traj_i1, traj_u, config.lateral.eps_v)
    plan.t0_lateral = lateral_start_time(taus, best.tf, config.lateral.aggressiveness)
    log.debug("plan: pair %s D=%.4f tf=%.3f relax=%d", plan.pair_ids, plan.D_value,
              plan.tf_final, plan.relaxations_used)
    return plan


def feasible_pairs(plan: ManeuverPlan) -> set[int]:
    return {e.index for e in plan.evaluations if e.feasible}
