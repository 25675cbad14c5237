"""Reference inputs and seeded random instances of the four longitudinal OCPs.

Each instance carries an analytic solve and the matching transcription-oracle
spec, so tests and scripts compare the two routes on identical data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core_model import Infeasible, Lane, LongitudinalSolution, VehicleLimits, VehicleState, safety_distance
from .numerics import OCPSpec, TranscriptionConfig, transcription_oracle
from .ocp_longitudinal import (
    CWeights,
    TrackingWeights,
    solve_cav_c,
    solve_cav_c_relaxed,
    solve_tracking_i,
    solve_tracking_i1,
)
from .oracle_specs import cav_c_relaxed_spec, cav_c_spec, tracking_i1_spec, tracking_i_spec

# sample maneuver of the lane-changing vehicle: U 50 m ahead at 16 m/s, C at 23 m/s
REF_C = VehicleState("C", 0.0, 23.0, Lane.SLOW)
REF_U = VehicleState("U", 50.0, 16.0, Lane.SLOW)
REF_V_FLOW = 30.0
REF_WEIGHTS = CWeights(w_t=0.55, w_v=0.5, w_u=0.02)
REF_LIMITS = VehicleLimits()
REF_TF = 2.73
REF_V = 29.53
REF_RELAXED_TF = 3.63
REF_RELAXED_V = 29.57


@dataclass(frozen=True)
class Instance:
    kind: str
    label: str
    solve: Callable[[], LongitudinalSolution]
    spec: OCPSpec


def _limits(rng: np.random.Generator) -> VehicleLimits:
    return VehicleLimits(phi=float(rng.uniform(0.3, 1.8)))


def _c_and_u(rng: np.random.Generator, lim: VehicleLimits):
    v_c = float(rng.uniform(12.0, 30.0))
    v_u = float(rng.uniform(10.5, 24.0))
    gap = safety_distance(lim, v_c) + float(rng.uniform(0.5, 60.0))
    return VehicleState("C", 0.0, v_c, Lane.SLOW), VehicleState("U", gap, v_u, Lane.SLOW)


def random_cav_c(rng: np.random.Generator, t_max: float = 15.0) -> Instance:
    lim = _limits(rng)
    c, u = _c_and_u(rng, lim)
    v_flow = float(rng.uniform(max(u.v + 1.0, 20.0), 35.0))
    w = CWeights(float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.05, 1.0)),
                 float(rng.uniform(0.02, 0.5)))
    return Instance("cav_c", f"vc={c.v:.2f} vu={u.v:.2f} gap={u.x:.2f} vf={v_flow:.2f} phi={lim.phi:.2f}",
                    lambda: solve_cav_c(c, u, v_flow, w, lim, t_max),
                    cav_c_spec(c, u, v_flow, w.alpha_t, w.alpha_v, lim, t_max))


def random_cav_c_relaxed(rng: np.random.Generator) -> Instance:
    lim = _limits(rng)
    c, u = _c_and_u(rng, lim)
    v_flow = float(rng.uniform(max(u.v + 1.0, 20.0), 35.0))
    tf = float(rng.uniform(1.0, 10.0))
    tw = TrackingWeights.from_limits(float(rng.uniform(0.1, 0.9)), lim)
    return Instance("cav_c_relaxed", f"vc={c.v:.2f} gap={u.x:.2f} tf={tf:.2f}",
                    lambda: solve_cav_c_relaxed(c, u, v_flow, tf, tw, lim),
                    cav_c_relaxed_spec(c, u, v_flow, tf, tw.beta, lim))


def random_tracking_i(rng: np.random.Generator) -> Instance:
    lim = _limits(rng)
    c_lim = _limits(rng)
    tf = float(rng.uniform(1.5, 10.0))
    v_i = float(rng.uniform(20.0, 34.0))
    v_flow = float(rng.uniform(25.0, 35.0))
    vC_tf = float(rng.uniform(18.0, 32.0))
    x_i = float(rng.uniform(-30.0, 60.0))
    # C ends a random distance from where i would be at constant speed
    xC_tf = x_i + v_i * tf - safety_distance(c_lim, vC_tf) + float(rng.uniform(-25.0, 15.0))
    state = VehicleState("i", x_i, v_i, Lane.FAST)
    leader: Optional[VehicleState] = None
    if rng.uniform() < 0.5:
        leader = VehicleState("lead", x_i + safety_distance(lim, v_i) + float(rng.uniform(2.0, 40.0)),
                              float(rng.uniform(22.0, 34.0)), Lane.FAST)
    tw = TrackingWeights.from_limits(float(rng.uniform(0.1, 0.9)), lim)
    return Instance("tracking_i", f"vi={v_i:.2f} xCtf-xi={xC_tf - x_i:.2f} tf={tf:.2f} lead={leader is not None}",
                    lambda: solve_tracking_i(state, xC_tf, vC_tf, tf, tw, lim, v_flow, leader, c_lim),
                    tracking_i_spec(state, xC_tf, vC_tf, tf, tw.beta, lim, v_flow, leader, c_lim))


def random_tracking_i1(rng: np.random.Generator) -> Instance:
    lim = _limits(rng)
    tf = float(rng.uniform(1.5, 10.0))
    v_i1 = float(rng.uniform(20.0, 34.0))
    v_flow = float(rng.uniform(25.0, 35.0))
    x_i1 = float(rng.uniform(-120.0, -20.0))
    vC_tf = float(rng.uniform(20.0, 32.0))
    xC_tf = x_i1 + v_i1 * tf + safety_distance(lim, v_i1) + float(rng.uniform(-20.0, 20.0))
    state = VehicleState("i1", x_i1, v_i1, Lane.FAST)
    tw = TrackingWeights.from_limits(float(rng.uniform(0.1, 0.9)), lim,
                                     v_th=float(rng.uniform(15.0, 26.0)))
    return Instance("tracking_i1", f"vi1={v_i1:.2f} xCtf-xi1={xC_tf - x_i1:.2f} tf={tf:.2f} vth={tw.v_th:.1f}",
                    lambda: solve_tracking_i1(state, xC_tf, vC_tf, tf, tw, lim, v_flow),
                    tracking_i1_spec(state, xC_tf, tf, tw.beta, tw.v_th, lim, v_flow))


GENERATORS = {
    "cav_c": random_cav_c,
    "cav_c_relaxed": random_cav_c_relaxed,
    "tracking_i": random_tracking_i,
    "tracking_i1": random_tracking_i1,
}


@dataclass
class Comparison:
    kind: str
    label: str
    analytic: float
    oracle: float
    reason: str = ""

    @property
    def ok(self) -> bool:
        return abs(self.analytic - self.oracle) <= 0.02 * abs(self.oracle) + 1e-4


def compare_feasible(kind: str, n: int, seed: int,
                     config: TranscriptionConfig = TranscriptionConfig(),
                     max_draws: int = 500) -> list[Comparison]:
    """First n draws the oracle finds feasible, each compared with the analytic solve.

    Feasibility is decided by the oracle alone, so an analytic Infeasible on a
    feasible draw is reported as a failed comparison (analytic = inf).
    """
    rng = np.random.default_rng(seed)
    gen = GENERATORS[kind]
    out: list[Comparison] = []
    for _ in range(max_draws):
        if len(out) == n:
            break
        inst = gen(rng)
        try:
            orc = transcription_oracle(inst.spec, config)
        except Infeasible:
            continue
        try:
            value, reason = inst.solve().objective_value, ""
        except Infeasible as e:
            value, reason = math.inf, e.reason
        out.append(Comparison(kind, inst.label, value, orc.objective, reason))
    return out
