"""Transcription-oracle problem statements for the four longitudinal OCPs.

These restate each problem directly (objective + constraints) without any
of the structural knowledge used by the analytical solvers.
"""

from __future__ import annotations

from typing import Optional

from .core_model import VehicleLimits, VehicleState, safety_distance
from .numerics import LinearConstraint, OCPSpec


def _base(state: VehicleState, lim: VehicleLimits, **kw) -> OCPSpec:
    return OCPSpec(state.x, state.v, lim.u_min, lim.u_max, lim.v_min, lim.v_max, **kw)


def cav_c_spec(c: VehicleState, u: VehicleState, v_flow: float, alpha_t: float, alpha_v: float,
               lim: VehicleLimits, t_max: float) -> OCPSpec:
    behind_u = LinearConstraint(1.0, lim.phi, u.x - lim.eps, u.v)
    return _base(c, lim, tf=None, t_max=t_max, time_weight=alpha_t, speed_weight=0.5 * alpha_v,
                 v_ref=v_flow, running=(behind_u,))


def cav_c_relaxed_spec(c: VehicleState, u: VehicleState, v_flow: float, tf: float, beta: float,
                       lim: VehicleLimits) -> OCPSpec:
    behind_u = LinearConstraint(1.0, lim.phi, u.x - lim.eps, u.v)
    return _base(c, lim, tf=tf, t_max=tf, speed_weight=beta, v_ref=v_flow, running=(behind_u,))


def tracking_i_spec(state: VehicleState, xC_tf: float, vC_tf: float, tf: float, beta: float,
                    lim: VehicleLimits, v_flow: float, leader: Optional[VehicleState] = None,
                    c_lim: Optional[VehicleLimits] = None) -> OCPSpec:
    need = xC_tf + safety_distance(c_lim or lim, vC_tf)
    running = ()
    if leader is not None:
        running = (LinearConstraint(1.0, lim.phi, leader.x - lim.eps, leader.v),)
    return _base(state, lim, tf=tf, t_max=tf, speed_weight=beta, v_ref=v_flow,
                 terminal=(LinearConstraint(-1.0, 0.0, -need),), running=running)


def tracking_i1_spec(state: VehicleState, xC_tf: float, tf: float, beta: float, v_th: float,
                     lim: VehicleLimits, v_flow: float) -> OCPSpec:
    terminal = (
        LinearConstraint(1.0, lim.phi, xC_tf - lim.eps),
        LinearConstraint(0.0, -1.0, -v_th),
    )
    return _base(state, lim, tf=tf, t_max=tf, speed_weight=beta, v_ref=v_flow, terminal=terminal)
