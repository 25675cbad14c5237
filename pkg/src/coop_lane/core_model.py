"""Vehicle kinematics, safety distance and piecewise-polynomial trajectories.

Positions are expressed in the maneuver-local frame whose origin is the
position of the lane-changing vehicle at the trigger time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

TOL = 1e-6
GRID_DT = 0.01


class Infeasible(Exception):
    """Raised when an optimal control problem has no admissible solution."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class ContractError(ValueError):
    pass


class Lane(str, Enum):
    FAST = "fast"
    SLOW = "slow"


class ArcKind(str, Enum):
    POLY = "poly"
    CONST_U = "const_u"
    CONST_V = "const_v"
    # riding the safety distance behind a constant-speed leader
    SAFETY_BOUNDARY = "safety_boundary"


@dataclass(frozen=True)
class VehicleState:
    id: str
    x: float
    v: float
    lane: Lane = Lane.FAST

    def __post_init__(self):
        if not math.isfinite(self.v) or self.v < 0:
            raise ContractError(f"speed must be finite and non-negative, got {self.v}")
        if math.isnan(self.x):
            raise ContractError("position is NaN")


@dataclass(frozen=True)
class VehicleLimits:
    u_min: float = -7.0
    u_max: float = 3.3
    v_min: float = 10.0
    v_max: float = 35.0
    phi: float = 0.6
    eps: float = 1.5

    def __post_init__(self):
        if not (self.u_min < 0 < self.u_max):
            raise ContractError("need u_min < 0 < u_max")
        if not (0 < self.v_min <= self.v_max):
            raise ContractError("need 0 < v_min <= v_max")
        if self.phi < 0 or self.eps <= 0:
            raise ContractError("need phi >= 0 and eps > 0")


def safety_distance(limits: VehicleLimits, v: float) -> float:
    if v < 0:
        raise ValueError(f"safety distance undefined for negative speed {v}")
    return limits.phi * v + limits.eps


@dataclass(frozen=True)
class Arc:
    """One trajectory piece; with s = t - t_start, u = a*s + b and

    v = a*s^2/2 + b*s + c,  x = a*s^3/6 + b*s^2/2 + c*s + d.

    A SAFETY_BOUNDARY arc instead keeps x + a*v on a line of slope c (the
    leader speed): v = c + b*exp(-s/a), x = d + c*s + a*b*(1 - exp(-s/a)).
    """

    kind: ArcKind
    t_start: float
    t_end: float
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    def __post_init__(self):
        if self.t_end < self.t_start:
            raise ContractError("arc ends before it starts")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def state(self, t: float) -> tuple[float, float, float]:
        s = t - self.t_start
        if self.kind == ArcKind.SAFETY_BOUNDARY:
            e = math.exp(-s / self.a)
            return (self.d + self.c * s + self.a * self.b * (1.0 - e), self.c + self.b * e,
                    -self.b / self.a * e)
        u = self.a * s + self.b
        v = (0.5 * self.a * s + self.b) * s + self.c
        x = ((self.a * s / 6.0 + 0.5 * self.b) * s + self.c) * s + self.d
        return x, v, u

    def end_state(self) -> tuple[float, float, float]:
        return self.state(self.t_end)

    def start_state(self) -> tuple[float, float, float]:
        return self.state(self.t_start)

    def energy(self) -> float:
        """Integral of u^2/2 over the arc."""
        L = self.duration
        a, b = self.a, self.b
        if self.kind == ArcKind.SAFETY_BOUNDARY:
            return b * b / (4.0 * a) * (1.0 - math.exp(-2.0 * L / a))
        return 0.5 * (a * a * L**3 / 3.0 + a * b * L * L + b * b * L)


class CaseLabel(str, Enum):
    UNCONSTRAINED = "Unconstrained"
    UMAX_ARC = "UmaxArc"
    UMIN_ARC = "UminArc"
    UMIN_UMAX_ARCS = "UminUmaxArcs"
    VMIN_ARC = "VminArc"
    UMIN_VMIN_ARCS = "UminVminArcs"
    UMAX_VMIN_ARCS = "UmaxVminArcs"
    UMIN_VMIN_UMAX_ARCS = "UminVminUmaxArcs"
    TERMINAL_SAFETY_EQUALITY = "TerminalSafetyEquality"
    SAFETY_BOUNDARY_ARC = "SafetyBoundaryArc"
    VMAX_ARC = "VmaxArc"


@dataclass(frozen=True)
class LongitudinalSolution:
    arcs: tuple[Arc, ...]
    t0: float
    tf: float
    terminal_x: float
    terminal_v: float
    case_label: CaseLabel
    objective_value: float
    active: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.arcs:
            raise ContractError("solution needs at least one arc")

    def energy(self) -> float:
        return sum(arc.energy() for arc in self.arcs)

    def breakpoints(self) -> list[float]:
        return [self.arcs[0].t_start] + [arc.t_end for arc in self.arcs]

    def sample(self, ts: Iterable[float]) -> np.ndarray:
        """Rows of (x, v, u) at the requested times."""
        return np.array([eval_trajectory(self, float(t)) for t in ts])


def constant_speed_solution(x0: float, v: float, t0: float, tf: float) -> LongitudinalSolution:
    arc = Arc(ArcKind.CONST_V, t0, tf, 0.0, 0.0, v, x0)
    return LongitudinalSolution(
        (arc,), t0, tf, x0 + v * (tf - t0), v, CaseLabel.UNCONSTRAINED, 0.0
    )


def eval_trajectory(sol: LongitudinalSolution, t: float) -> tuple[float, float, float]:
    """State and control at t; at a junction the later arc wins."""
    slack = 1e-12 * max(1.0, abs(sol.tf))
    if t < sol.t0 - slack or t > sol.tf + slack:
        raise ValueError(f"t={t} outside [{sol.t0}, {sol.tf}]")
    arcs = sol.arcs
    for arc in arcs:
        if arc.t_start <= t < arc.t_end:
            return arc.state(t)
    if t < arcs[0].t_start:
        return arcs[0].state(arcs[0].t_start)
    return arcs[-1].state(min(t, arcs[-1].t_end))


def _sample_times(t0: float, tf: float, dt: float, extra: Iterable[float] = ()) -> np.ndarray:
    n = max(1, int(math.ceil((tf - t0) / dt - 1e-9)))
    ts = np.concatenate([np.linspace(t0, tf, n + 1), np.fromiter(extra, float)])
    ts = ts[(ts >= t0) & (ts <= tf)]
    return np.unique(ts)


def critical_times(sol: LongitudinalSolution) -> list[float]:
    """Arc junctions plus the interior zeros of u (extrema of v)."""
    out = sol.breakpoints()
    for arc in sol.arcs:
        if arc.kind != ArcKind.SAFETY_BOUNDARY and arc.a != 0.0:
            s = -arc.b / arc.a
            if 0.0 < s < arc.duration:
                out.append(arc.t_start + s)
    return out


def bound_violation(sol: LongitudinalSolution, limits: VehicleLimits, dt: float = GRID_DT) -> float:
    """Largest excursion of u or v outside the limits on the check grid."""
    ts = _sample_times(sol.t0, sol.tf, dt, critical_times(sol))
    worst = 0.0
    for arc in sol.arcs:
        # controls are affine or exponential per arc, so endpoints bound them
        for t in (arc.t_start, arc.t_end):
            _, _, u = arc.state(t)
            worst = max(worst, limits.u_min - u, u - limits.u_max)
    for t in ts:
        _, v, _ = eval_trajectory(sol, float(t))
        worst = max(worst, limits.v_min - v, v - limits.v_max)
    return worst


@dataclass(frozen=True)
class SafetyReport:
    ok: bool
    constraint: Optional[str] = None
    t: Optional[float] = None
    amount: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


def _gap_minimum(lead: LongitudinalSolution, follow: LongitudinalSolution,
                 limits: VehicleLimits, dt: float, tol: float = TOL) -> tuple[float, float]:
    """Minimum of x_lead - x_follow - delta(v_follow), and the first time it drops below -tol
    (where the minimum occurs if it never does).

    The margin is a cubic between junctions of either trajectory, so the
    grid is augmented with the stationary points of each cubic piece.
    """
    t0, tf = follow.t0, follow.tf
    cuts = sorted(set(lead.breakpoints() + follow.breakpoints()))
    cuts = [t for t in cuts if t0 <= t <= tf]
    extra = list(cuts)

    def margin(t: float) -> float:
        xl, _, _ = eval_trajectory(lead, t)
        xf, vf, _ = eval_trajectory(follow, t)
        return xl - xf - (limits.phi * vf + limits.eps)

    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi - lo < 1e-12:
            continue
        s = np.linspace(lo, hi, 4)
        # nudge inside so each sample sits on the arcs of this piece
        s[0] += 1e-9 * (hi - lo)
        s[-1] -= 1e-9 * (hi - lo)
        coef = np.polyfit(s - lo, [margin(float(t)) for t in s], 3)
        for r in np.roots(np.polyder(coef)):
            if abs(r.imag) < 1e-12 and 0.0 < r.real < hi - lo:
                extra.append(lo + r.real)
    best_t, best, first = t0, math.inf, None
    for t in _sample_times(t0, tf, dt, extra):
        m = margin(float(t))
        if m < best:
            best, best_t = m, float(t)
        if first is None and m < -tol:
            first = float(t)
    return best, best_t if first is None else first


def check_safety_constraints(
    traj_c: LongitudinalSolution,
    traj_u: Optional[LongitudinalSolution],
    traj_i: Optional[LongitudinalSolution],
    traj_i1: Optional[LongitudinalSolution],
    limits_c: VehicleLimits,
    limits_i1: Optional[VehicleLimits] = None,
    grid_dt: float = GRID_DT,
    tol: float = TOL,
) -> SafetyReport:
    """Check constraints (a)-(d); None stands for an absent/virtual vehicle."""
    limits_i1 = limits_i1 or limits_c
    trajs = [s for s in (traj_c, traj_u, traj_i, traj_i1) if s is not None]
    for s in trajs:
        if abs(s.t0 - traj_c.t0) > 1e-9 or abs(s.tf - traj_c.tf) > 1e-9:
            raise ContractError("trajectories must share the horizon [t0, tf]")
    tf = traj_c.tf
    if traj_u is not None:
        m, t = _gap_minimum(traj_u, traj_c, limits_c, grid_dt, tol)
        if m < -tol:
            return SafetyReport(False, "a", t, -m)
    if traj_i is not None and traj_i1 is not None:
        m, t = _gap_minimum(traj_i, traj_i1, limits_i1, grid_dt, tol)
        if m < -tol:
            return SafetyReport(False, "b", t, -m)
    xc, vc, _ = eval_trajectory(traj_c, tf)
    if traj_i1 is not None:
        x1, v1, _ = eval_trajectory(traj_i1, tf)
        m = xc - x1 - safety_distance(limits_i1, v1)
        if m < -tol:
            return SafetyReport(False, "c", tf, -m)
    if traj_i is not None:
        xi, _, _ = eval_trajectory(traj_i, tf)
        m = xi - xc - safety_distance(limits_c, vc)
        if m < -tol:
            return SafetyReport(False, "d", tf, -m)
    return SafetyReport(True)


def running_gap_violation(sol: LongitudinalSolution, x_lead0: float, v_lead: float,
                          limits: VehicleLimits, dt: float = GRID_DT) -> float:
    """Worst shortfall of the safety gap behind a constant-speed leader."""
    lead = constant_speed_solution(x_lead0 + v_lead * sol.t0, v_lead, sol.t0, sol.tf)
    m, _ = _gap_minimum(lead, sol, limits, dt)
    return max(0.0, -m)


def stitch_check(arcs: Sequence[Arc]) -> float:
    """Largest state jump between consecutive arcs."""
    worst = 0.0
    for prev, nxt in zip(arcs[:-1], arcs[1:]):
        x0, v0, _ = prev.end_state()
        x1, v1, _ = nxt.start_state()
        worst = max(worst, abs(x0 - x1), abs(v0 - v1), abs(prev.t_end - nxt.t_start))
    return worst
