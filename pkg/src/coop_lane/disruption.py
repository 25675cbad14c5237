"""Position and speed disruption of fast-lane vehicles and the triplet total."""

from __future__ import annotations

from dataclasses import dataclass

from .core_model import ContractError, VehicleLimits


@dataclass(frozen=True)
class DisruptionParams:
    gamma: float = 0.8
    zeta_C: float = 0.5
    zeta_i: float = 0.0
    zeta_i1: float = 0.5
    D_th: float = 0.15

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError("gamma must lie in [0, 1]")
        zs = (self.zeta_C, self.zeta_i, self.zeta_i1)
        if min(zs) < 0 or abs(sum(zs) - 1.0) > 1e-9:
            raise ContractError("zeta weights must be non-negative and sum to 1")
        if self.D_th < 0:
            raise ContractError("D_th must be non-negative")


def position_disruption(x_t: float, x0: float, v0: float, t: float, t0: float = 0.0) -> float:
    """Squared offset from the position reached by cruising at v0."""
    if t < t0:
        raise ContractError("t must not precede t0")
    return (x_t - (x0 + v0 * (t - t0))) ** 2


def max_position_disruption(v0: float, t: float, t0: float, limits: VehicleLimits) -> float:
    """Largest shortfall against cruising: brake at u_min, then hold v_min once reached."""
    dt = t - t0
    if dt <= 0.0:
        return 0.0
    u_min, v_min = limits.u_min, limits.v_min
    if v0 <= v_min:
        return 0.0
    if u_min * dt + v0 >= v_min:
        return -0.5 * u_min * dt * dt
    # time to reach v_min, then cruise; travelled = braking distance + cruise distance
    t_brake = (v_min - v0) / u_min
    travelled = (v_min * v_min - v0 * v0) / (2.0 * u_min) + v_min * (dt - t_brake)
    return v0 * dt - travelled


def speed_disruption(v_t: float, v_flow: float) -> float:
    return (v_t - v_flow) ** 2


def speed_normalizer(v_flow: float, limits: VehicleLimits) -> float:
    return max((limits.v_min - v_flow) ** 2, (limits.v_max - v_flow) ** 2)


def vehicle_disruption(x_t: float, v_t: float, t: float, x0: float, v0: float, t0: float,
                       v_flow: float, params: DisruptionParams, limits: VehicleLimits) -> float:
    """Normalised disruption of one vehicle at time t relative to uniform motion from (x0, v0)."""
    norm_v = speed_normalizer(v_flow, limits)
    if norm_v <= 0.0:
        raise ContractError("speed normaliser vanishes (v_min = v_max = v_flow)")
    if t <= t0:
        return 0.0
    d_x = position_disruption(x_t, x0, v0, t, t0)
    d_xmax = max_position_disruption(v0, t, t0, limits)
    if d_xmax > 1e-12:
        pos = params.gamma * d_x / d_xmax**2
    else:
        # a vehicle already at v_min cannot fall behind; any offset counts as maximal
        pos = params.gamma if d_x > 1e-12 else 0.0
    return pos + (1.0 - params.gamma) * speed_disruption(v_t, v_flow) / norm_v


def total_disruption(D_C: float, D_i: float, D_i1: float, params: DisruptionParams) -> float:
    return params.zeta_C * D_C + params.zeta_i * D_i + params.zeta_i1 * D_i1
