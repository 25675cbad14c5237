"""Candidate cooperation sets on the fast lane and the flow-speed estimate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .core_model import ContractError, Lane, VehicleLimits, VehicleState

SENTINEL_X = 1e9
VIRTUAL_FRONT = "virtual+"
VIRTUAL_REAR = "virtual-"


class NoObservation(ValueError):
    """The set has no real member whose speed could be averaged."""


@dataclass(frozen=True)
class FlowParams:
    L_f: float = 50.0
    L_r: float = 80.0
    omega: float = 0.3
    v_max_road: float = 35.0
    T_max: float = 15.0
    # "projection": constant-speed projection to T_max (default)
    # "extremes": union of max-accel and max-decel projections to tf*
    mode: str = "projection"

    def __post_init__(self):
        if self.L_f < 0 or self.L_r < 0:
            raise ContractError("window lengths must be non-negative")
        if not 0.0 <= self.omega <= 1.0:
            raise ContractError("omega must lie in [0, 1]")
        if self.T_max <= 0:
            raise ContractError("T_max must be positive")
        if self.mode not in ("projection", "extremes"):
            raise ContractError(f"unknown set mode {self.mode!r}")


@dataclass(frozen=True)
class CandidateSet:
    """Front-to-rear members; index 0 is i+ and the last index is i-."""

    ordered: tuple[str, ...]
    states: tuple[VehicleState, ...]
    virtual_front: bool
    virtual_rear: bool

    def __post_init__(self):
        if len(self.ordered) != len(self.states) or len(self.states) < 2:
            raise ContractError("a candidate set holds i+, the members and i-")
        xs = [s.x for s in self.states]
        if any(a <= b for a, b in zip(xs[:-1], xs[1:])):
            raise ContractError("candidate set must be strictly decreasing in x")

    def __len__(self) -> int:
        return len(self.states)

    def is_virtual(self, k: int) -> bool:
        return (k == 0 and self.virtual_front) or (k == len(self.states) - 1 and self.virtual_rear)

    @property
    def real_states(self) -> list[VehicleState]:
        return [s for k, s in enumerate(self.states) if not self.is_virtual(k)]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(k, k + 1) for k in range(len(self.states) - 1)]


def _virtual(front: bool) -> VehicleState:
    if front:
        return VehicleState(VIRTUAL_FRONT, SENTINEL_X, 0.0, Lane.FAST)
    return VehicleState(VIRTUAL_REAR, -SENTINEL_X, 0.0, Lane.FAST)


def window(x_c: float, x_u: float, v_u: float, params: FlowParams, v_min: float,
           horizon: Optional[float] = None) -> tuple[float, float]:
    """Interval [x_C(T) - L_r, x_U(T) + L_f] with C projected at v_min."""
    T = params.T_max if horizon is None else horizon
    return x_c + v_min * T - params.L_r, x_u + v_u * T + params.L_f


def _assemble(lane: Sequence[VehicleState], inside, ahead, behind) -> CandidateSet:
    """Members plus nearest-outside neighbours, ordered by current position."""
    members = [s for s in lane if inside(s)]
    front = [s for s in lane if ahead(s)]
    rear = [s for s in lane if behind(s)]
    chosen = list(members)
    i_plus = min(front, key=lambda s: (s.x, s.id)) if front else None
    i_minus = max(rear, key=lambda s: (s.x, s.id)) if rear else None
    for s in (i_plus, i_minus):
        if s is not None and s not in chosen:
            chosen.append(s)
    chosen.sort(key=lambda s: (-s.x, s.id))
    if i_plus is None or chosen[0] is not i_plus:
        chosen.insert(0, _virtual(True))
        vf = True
    else:
        vf = False
    if i_minus is None or chosen[-1] is not i_minus:
        chosen.append(_virtual(False))
        vr = True
    else:
        vr = False
    return CandidateSet(tuple(s.id for s in chosen), tuple(chosen), vf, vr)


def build_candidate_set(fast_lane: Iterable[VehicleState], x_c: float, x_u: float, v_u: float,
                        params: FlowParams, v_min: float = VehicleLimits.v_min) -> CandidateSet:
    """Over-approximate the cooperation set by projecting everyone to T_max."""
    lane = sorted(fast_lane, key=lambda s: (-s.x, s.id))
    lo, hi = window(x_c, x_u, v_u, params, v_min)
    T = params.T_max

    def proj(s):
        return s.x + s.v * T

    return _assemble(lane, lambda s: lo <= proj(s) <= hi,
                     lambda s: proj(s) > hi, lambda s: proj(s) < lo)


def _extreme_positions(s: VehicleState, T: float, lim: VehicleLimits) -> tuple[float, float]:
    """Positions after T under full braking and under full acceleration (speed-capped)."""
    def travel(u: float, v_cap: float) -> float:
        t_cap = (v_cap - s.v) / u
        if t_cap <= 0.0:
            return s.v * T
        if t_cap >= T:
            return s.v * T + 0.5 * u * T * T
        return s.v * t_cap + 0.5 * u * t_cap**2 + v_cap * (T - t_cap)

    return s.x + travel(lim.u_min, lim.v_min), s.x + travel(lim.u_max, lim.v_max)


def build_extreme_set(fast_lane: Iterable[VehicleState], x_c_tf: float, x_u_tf: float, tf: float,
                      params: FlowParams, limits: VehicleLimits) -> CandidateSet:
    """Alternative set: members whose braking or accelerating projection to tf lands in the window."""
    lane = sorted(fast_lane, key=lambda s: (-s.x, s.id))
    lo, hi = x_c_tf - params.L_r, x_u_tf + params.L_f

    def span(s):
        return _extreme_positions(s, tf, limits)

    def inside(s):
        a, b = span(s)
        return (lo <= a <= hi) or (lo <= b <= hi) or (a < lo and b > hi)

    return _assemble(lane, inside, lambda s: span(s)[0] > hi, lambda s: span(s)[1] < lo)


def average_speed(cset: CandidateSet) -> float:
    real = cset.real_states
    if not real:
        raise NoObservation("candidate set has only virtual members")
    return sum(s.v for s in real) / len(real)


def flow_speed(cset: CandidateSet, params: FlowParams) -> float:
    try:
        v_avg = average_speed(cset)
    except NoObservation:
        return params.v_max_road
    return params.omega * v_avg + (1.0 - params.omega) * params.v_max_road
