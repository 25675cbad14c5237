"""Analytical solvers for the longitudinal optimal control problems.

Every solver works in the maneuver-local frame with t0 = 0.  On unconstrained
arcs the costates give an affine control u(t) = a*t + b; bounds on u clip
that line, and the speed bounds insert constant-speed plateaus entered and
left with u = 0.  Terminal inequalities are handled with a small active-set
enumeration, and the free-time problem for C adds the transversality
condition as a third equation.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, minimize

from .core_model import (
    TOL,
    Arc,
    ArcKind,
    CaseLabel,
    ContractError,
    Infeasible,
    LongitudinalSolution,
    VehicleLimits,
    VehicleState,
    bound_violation,
    running_gap_violation,
    safety_distance,
)
from .numerics import NewtonConfig, NoConvergence, newton_solve

log = logging.getLogger(__name__)

# the clipped profiles make the residuals piecewise smooth; Newton either
# converges fast or stalls at a kink, where the bracketing fallback takes over
INNER_NEWTON = NewtonConfig(max_iters=12, min_step=1e-8)


@dataclass(frozen=True)
class CWeights:
    w_t: float = 0.55
    w_v: float = 0.25
    w_u: float = 0.2

    def __post_init__(self):
        if self.w_u <= 0 or self.w_t < 0 or self.w_v < 0:
            raise ContractError("weights must be non-negative with w_u > 0")

    @property
    def alpha_t(self) -> float:
        return self.w_t / self.w_u

    @property
    def alpha_v(self) -> float:
        return self.w_v / self.w_u


def tracking_beta(alpha_v: float, u_min: float, u_max: float) -> float:
    return alpha_v * max(u_min * u_min, u_max * u_max) / (1.0 - alpha_v)


@dataclass(frozen=True)
class TrackingWeights:
    alpha_v: float = 0.5
    beta: float = 49.0
    v_th: float = 25.0

    def __post_init__(self):
        if not 0.0 < self.alpha_v < 1.0:
            raise ContractError("alpha_v must lie in (0, 1)")
        if self.beta <= 0:
            raise ContractError("beta must be positive")

    @classmethod
    def from_limits(cls, alpha_v: float, limits: VehicleLimits, v_th: float = 25.0) -> "TrackingWeights":
        if not 0.0 < alpha_v < 1.0:
            raise ContractError("alpha_v must lie in (0, 1)")
        return cls(alpha_v, tracking_beta(alpha_v, limits.u_min, limits.u_max), v_th)


# ---------------------------------------------------------------------------
# trajectory profiles


class _Builder:
    def __init__(self, x0: float, v0: float):
        self.arcs: list[Arc] = []
        self.x, self.v = x0, v0
        self.tags: set = set()

    def push(self, kind: ArcKind, t0: float, t1: float, slope: float, u0: float):
        if t1 - t0 <= 0.0:
            return
        self.arcs.append(Arc(kind, t0, t1, slope, u0, self.v, self.x))
        # end state inline, this sits in the innermost Newton loop
        L = t1 - t0
        self.x += ((slope * L / 6.0 + 0.5 * u0) * L + self.v) * L
        self.v += (0.5 * slope * L + u0) * L

    def affine(self, a: float, b: float, t0: float, t1: float, lim: VehicleLimits):
        """u = clip(a*t + b) on [t0, t1]."""
        cuts = [t0, t1]
        if a != 0.0:
            for level in (lim.u_min, lim.u_max):
                tc = (level - b) / a
                if t0 < tc < t1:
                    cuts.append(tc)
            cuts.sort()
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            mid = a * 0.5 * (lo + hi) + b
            if mid >= lim.u_max:
                self.tags.add("umax")
                self.push(ArcKind.CONST_U, lo, hi, 0.0, lim.u_max)
            elif mid <= lim.u_min:
                self.tags.add("umin")
                self.push(ArcKind.CONST_U, lo, hi, 0.0, lim.u_min)
            else:
                kind = ArcKind.POLY if a != 0.0 else ArcKind.CONST_U
                self.push(kind, lo, hi, a, a * lo + b)

    def cruise(self, t0: float, t1: float, tag: str):
        if t1 - t0 > 0.0:
            self.tags.add(tag)
            self.push(ArcKind.CONST_V, t0, t1, 0.0, 0.0)


def _speed_at(arcs: Sequence[Arc], t: float) -> float:
    for arc in arcs:
        if t <= arc.t_end:
            return arc.state(t)[1]
    return arcs[-1].end_state()[1]


def _first_crossing(arcs: Sequence[Arc], level: float, below: bool) -> Optional[float]:
    """First time the speed reaches ``level`` from above (below=True) or below."""
    for arc in arcs:
        _, v_end, _ = arc.end_state()
        hit = v_end <= level if below else v_end >= level
        if not hit:
            continue
        qa, qb, qc = 0.5 * arc.a, arc.b, arc.c - level
        if abs(qa) < 1e-15:
            s = -qc / qb if qb != 0.0 else 0.0
        else:
            disc = max(qb * qb - 4 * qa * qc, 0.0)
            r = [(-qb - math.sqrt(disc)) / (2 * qa), (-qb + math.sqrt(disc)) / (2 * qa)]
            r = [s for s in r if -1e-12 <= s <= arc.duration + 1e-12]
            s = min(r) if r else arc.duration
        return arc.t_start + min(max(s, 0.0), arc.duration)
    return None


def _ramp_time(delta_v: float, slope: float, cap: float) -> float:
    """Length of a ramp u = slope*sigma (saturating at cap) whose integral is delta_v."""
    sig_c = cap / slope
    if delta_v <= 0.5 * slope * sig_c * sig_c:
        return math.sqrt(2.0 * delta_v / slope)
    return sig_c + (delta_v - 0.5 * slope * sig_c * sig_c) / cap


def profile(a: float, b: float, T: float, x0: float, v0: float, lim: VehicleLimits) -> _Builder:
    """Trajectory for the control family clip(a*t + b) with speed plateaus."""
    out = _Builder(x0, v0)
    if T <= 0.0:
        out.arcs.append(Arc(ArcKind.CONST_V, 0.0, 0.0, 0.0, 0.0, v0, x0))
        return out
    raw = _Builder(x0, v0)
    raw.affine(a, b, 0.0, T, lim)
    if a == 0.0:
        u = raw.arcs[0].b
        level, below = (lim.v_min, True) if u < 0 else (lim.v_max, False)
        t_hit = _first_crossing(raw.arcs, level, below) if u != 0.0 else None
        if t_hit is None or t_hit >= T:
            return raw
        out.affine(0.0, b, 0.0, t_hit, lim)
        out.cruise(t_hit, T, "vmin" if below else "vmax")
        return out
    tz = -b / a
    tm = min(max(tz, 0.0), T)
    v_ext = _speed_at(raw.arcs, tm)
    if a > 0.0 and v_ext < lim.v_min:
        level, below, cap, dv = lim.v_min, True, -lim.u_min, v0 - lim.v_min
    elif a < 0.0 and v_ext > lim.v_max:
        level, below, cap, dv = lim.v_max, False, lim.u_max, lim.v_max - v0
    else:
        return raw
    tag = "vmin" if below else "vmax"
    t1 = _ramp_time(max(dv, 0.0), abs(a), cap)
    t_exit = tm
    if t1 < t_exit:
        # tangential entry: u reaches zero exactly when the bound is reached
        out.affine(a, -a * t1, 0.0, t1, lim)
        out.cruise(t1, t_exit, tag)
        if t_exit < T:
            out.affine(a, b, t_exit, T, lim)
        return out
    t_hit = _first_crossing(raw.arcs, level, below)
    if t_hit is None or t_hit >= T:
        return raw
    out.affine(a, b, 0.0, t_hit, lim)
    out.cruise(t_hit, T, tag)
    return out


def _label_from_tags(tags: set, terminal_active: bool, fallback: CaseLabel) -> CaseLabel:
    if "safety" in tags:
        return CaseLabel.SAFETY_BOUNDARY_ARC
    key = frozenset(t for t in tags if t in ("umin", "umax", "vmin", "vmax"))
    table = {
        frozenset(): CaseLabel.TERMINAL_SAFETY_EQUALITY if terminal_active else fallback,
        frozenset({"umax"}): CaseLabel.UMAX_ARC,
        frozenset({"umin"}): CaseLabel.UMIN_ARC,
        frozenset({"umin", "umax"}): CaseLabel.UMIN_UMAX_ARCS,
        frozenset({"vmin"}): CaseLabel.VMIN_ARC,
        frozenset({"umin", "vmin"}): CaseLabel.UMIN_VMIN_ARCS,
        frozenset({"umax", "vmin"}): CaseLabel.UMAX_VMIN_ARCS,
        frozenset({"umin", "vmin", "umax"}): CaseLabel.UMIN_VMIN_UMAX_ARCS,
    }
    if "vmax" in key:
        return CaseLabel.VMAX_ARC
    return table.get(key, fallback)


# ---------------------------------------------------------------------------
# fixed terminal time: active-set KKT solve


@dataclass(frozen=True)
class TerminalConstraint:
    """p*x(T) + q*v(T) <= r, or == r when ``equality``."""

    p: float
    q: float
    r: float
    equality: bool = False
    name: str = ""

    def g(self, x: float, v: float) -> float:
        return self.p * x + self.q * v - self.r


def _arc_margin(arc: Arc, r0: float, r1: float, phi: float) -> float:
    """Exact minimum over the arc of r0 + r1*t - x - phi*v."""
    def h(s):
        x, v, _ = arc.state(arc.t_start + s)
        return r0 + r1 * (arc.t_start + s) - x - phi * v

    L = arc.duration
    points = [0.0, L]
    if arc.kind != ArcKind.SAFETY_BOUNDARY:
        # h' = r1 - v - phi*u is quadratic in the local time
        a, b = arc.a, arc.b
        coeffs = [-0.5 * a, -(b + phi * a), r1 - arc.c - phi * b]
        while coeffs and coeffs[0] == 0.0:
            coeffs.pop(0)
        if len(coeffs) > 1:
            points += [float(r.real) for r in np.roots(coeffs)
                       if abs(r.imag) < 1e-12 and 0.0 < r.real < L]
    return min(h(s) for s in points)


@dataclass(frozen=True)
class RunningSafety:
    """Constant-speed leader whose safety distance must hold over the whole horizon."""

    x0: float
    v: float


@dataclass
class FixedTimeResult:
    a: float
    b: float
    build: _Builder
    x_T: float
    v_T: float
    active: tuple
    multipliers: tuple


def _lin_state(a, b, T, x0, v0):
    return x0 + v0 * T + a * T**3 / 6.0 + b * T * T / 2.0, v0 + a * T * T / 2.0 + b * T


def _root_bracket(f, x0, step, limit=1e4):
    """Expand from x0 along sign(step) until f changes sign."""
    f0 = f(x0)
    if f0 == 0.0:
        return x0, x0
    x, s = x0, step
    while abs(x - x0) < limit:
        xn = x0 + s
        fn = f(xn)
        if fn == 0.0 or (fn > 0) != (f0 > 0):
            return (x, xn) if x < xn else (xn, x)
        x, s = xn, s * 2.0
    return None


class FixedTimeProblem:
    """min  w/2 (v(T) - v_ref)^2 + int u^2/2   s.t. bounds and terminal constraints."""

    def __init__(self, x0: float, v0: float, T: float, lim: VehicleLimits, w: float, v_ref: float,
                 constraints: Sequence[TerminalConstraint], newton: NewtonConfig = INNER_NEWTON):
        self.x0, self.v0, self.T, self.lim = x0, v0, T, lim
        self.w, self.v_ref = w, v_ref
        self.cons = tuple(constraints)
        self.newton = newton

    # residual helpers ---------------------------------------------------
    def terminal(self, a, b):
        bld = profile(a, b, self.T, self.x0, self.v0, self.lim)
        return bld, bld.x, bld.v

    def _costate_res(self, a, b, v_T, nu_q):
        return a * self.T + b + self.w * (v_T - self.v_ref) + nu_q

    def _solve_2d(self, res_lin, res_true, inner_solve):
        """Linear guess (unclipped arcs), then Newton, then a nested bracket search."""
        f0 = np.asarray(res_lin(0.0, 0.0))
        fa = np.asarray(res_lin(1.0, 0.0)) - f0
        fb = np.asarray(res_lin(0.0, 1.0)) - f0
        M = np.column_stack([fa, fb])
        seeds = []
        try:
            seeds.append(np.linalg.solve(M, -f0))
        except np.linalg.LinAlgError:
            pass
        seeds.append(np.zeros(2))
        for s in seeds:
            if np.max(np.abs(res_true(s))) <= self.newton.tol_residual * 10:
                return s
        try:
            sol = newton_solve(lambda z: res_true(z), seeds, self.newton)
            return sol.root
        except NoConvergence:
            pass
        return inner_solve()

    # active-set candidates ----------------------------------------------
    def _candidate(self, S: tuple) -> Optional[FixedTimeResult]:
        T, lim = self.T, self.lim
        cons = [self.cons[k] for k in S]
        if not cons:
            b_lin = self.w * (self.v_ref - self.v0) / (1.0 + self.w * T)
            u = min(max(b_lin, lim.u_min), lim.u_max)
            b = -self.w * (self.v0 + u * T - self.v_ref) if u != b_lin else b_lin
            bld, xT, vT = self.terminal(0.0, b)
            return FixedTimeResult(0.0, b, bld, xT, vT, (), ())
        if len(cons) == 1:
            c = cons[0]
            if c.p == 0.0:
                vT = c.r / c.q
                u = (vT - self.v0) / T
                if not lim.u_min - 1e-12 <= u <= lim.u_max + 1e-12:
                    return None
                bld, xT, vT = self.terminal(0.0, u)
                nu = -(u + self.w * (vT - self.v_ref)) / c.q
                return FixedTimeResult(0.0, u, bld, xT, vT, S, (nu,))

            def res_lin(a, b):
                x, v = _lin_state(a, b, T, self.x0, self.v0)
                return [self._costate_res(a, b, v, a * c.q / c.p), c.g(x, v)]

            def res_true(z):
                a, b = z
                _, x, v = self.terminal(a, b)
                return np.array([self._costate_res(a, b, v, a * c.q / c.p), c.g(x, v)])

            def inner():
                return self._nested_costate(c)

            z = self._solve_2d(res_lin, res_true, inner)
            if z is None:
                return None
            a, b = float(z[0]), float(z[1])
            bld, xT, vT = self.terminal(a, b)
            return FixedTimeResult(a, b, bld, xT, vT, S, (a / c.p,))
        c1, c2 = cons
        det = c1.p * c2.q - c2.p * c1.q
        if abs(det) < 1e-12:
            return None
        X = (c1.r * c2.q - c2.r * c1.q) / det
        V = (c1.p * c2.r - c2.p * c1.r) / det
        if not lim.v_min - 1e-9 <= V <= lim.v_max + 1e-9:
            return None

        def res_lin2(a, b):
            x, v = _lin_state(a, b, T, self.x0, self.v0)
            return [x - X, v - V]

        def res_true2(z):
            _, x, v = self.terminal(z[0], z[1])
            return np.array([x - X, v - V])

        z = self._solve_2d(res_lin2, res_true2, lambda: self._nested_states(X, V))
        if z is None:
            return None
        a, b = float(z[0]), float(z[1])
        bld, xT, vT = self.terminal(a, b)
        rhs = np.array([a, -(a * T + b + self.w * (vT - self.v_ref))])
        nu = np.linalg.solve(np.array([[c1.p, c2.p], [c1.q, c2.q]]), rhs)
        return FixedTimeResult(a, b, bld, xT, vT, S, tuple(float(n) for n in nu))

    def _nested_costate(self, c: TerminalConstraint):
        T = self.T
        scale = 1e3 * (1.0 + T)

        def b_of(a):
            def h(b):
                _, _, v = self.terminal(a, b)
                return self._costate_res(a, b, v, a * c.q / c.p)
            br = _root_bracket(h, 0.0, -scale if h(0.0) > 0 else scale, limit=1e7)
            if br is None:
                raise ValueError("no costate root")
            return brentq(h, *br, xtol=1e-14, rtol=1e-15) if br[0] != br[1] else br[0]

        def G(a):
            _, x, v = self.terminal(a, b_of(a))
            return c.g(x, v)

        try:
            g0 = G(0.0)
            d = 1.0 if c.p > 0 else -1.0
            step = 1e-3 * (d if g0 > 0 else -d)
            br = _root_bracket(G, 0.0, step, limit=1e4)
            if br is None:
                return None
            a = brentq(G, *br, xtol=1e-14, rtol=1e-15) if br[0] != br[1] else br[0]
            return np.array([a, b_of(a)])
        except ValueError:
            return None

    def _nested_states(self, X: float, V: float):
        T = self.T

        def b_of(a):
            def h(b):
                return self.terminal(a, b)[2] - V
            br = _root_bracket(h, 0.0, -1.0 if h(0.0) > 0 else 1.0, limit=1e7)
            if br is None:
                raise ValueError("terminal speed unreachable")
            return brentq(h, *br, xtol=1e-14, rtol=1e-15) if br[0] != br[1] else br[0]

        def G(a):
            return self.terminal(a, b_of(a))[1] - X

        try:
            g0 = G(0.0)
            # more slope pushes the effort later, which shortens the distance
            step = 1e-3 if g0 > 0 else -1e-3
            br = _root_bracket(G, 0.0, step, limit=1e4)
            if br is None:
                return None
            a = brentq(G, *br, xtol=1e-14, rtol=1e-15) if br[0] != br[1] else br[0]
            return np.array([a, b_of(a)])
        except ValueError:
            return None

    def _valid(self, res: FixedTimeResult, tol: float) -> bool:
        for k, c in enumerate(self.cons):
            g = c.g(res.x_T, res.v_T)
            if k in res.active:
                if abs(g) > tol:
                    return False
            elif g > tol:
                return False
        for k, nu in zip(res.active, res.multipliers):
            if not self.cons[k].equality and nu < -1e-9:
                return False
        return True

    def solve_running(self, lead: RunningSafety, tol: float = 1e-7) -> Optional[FixedTimeResult]:
        """As solve, plus x + phi*v <= x_lead(t) - eps at all times.

        The terminal-only optimum is kept when it already respects the running
        constraint; otherwise the optimum has the structure free arc (tangent
        entry) -> boundary arc -> free arc, searched over entry and exit times.
        """
        res = self.solve(tol)
        if res is None:
            return None
        r0 = lead.x0 - self.lim.eps
        if all(_arc_margin(arc, r0, lead.v, self.lim.phi) >= -TOL for arc in res.build.arcs):
            return res
        return self._composite(lead, tol)

    def _cost(self, arcs, v_T: float) -> float:
        return sum(arc.energy() for arc in arcs) + 0.5 * self.w * (v_T - self.v_ref) ** 2

    def _entry_arc(self, t1: float, r0: float, r1: float) -> Optional[_Builder]:
        """Free arc from the initial state that meets the boundary tangentially at t1."""
        lim, phi, x0, v0 = self.lim, self.lim.phi, self.x0, self.v0
        if t1 <= 1e-12:
            return _Builder(x0, v0) if abs(r0 - x0 - phi * v0) <= 1e-7 else None

        def res(z):
            bld = profile(z[0], z[1], t1, x0, v0, lim)
            u_end = bld.arcs[-1].end_state()[2]
            return np.array([r0 + r1 * t1 - bld.x - phi * bld.v, bld.v + phi * u_end - r1])

        # unclipped arcs make both conditions linear in (a, b)
        M = np.array([[t1**3 / 6.0 + phi * t1 * t1 / 2.0, t1 * t1 / 2.0 + phi * t1],
                      [t1 * t1 / 2.0 + phi * t1, t1 + phi]])
        rhs = np.array([r0 + r1 * t1 - x0 - v0 * t1 - phi * v0, r1 - v0])
        try:
            z = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            return None
        if np.max(np.abs(res(z))) > 1e-9:
            try:
                z = newton_solve(res, [z], self.newton).root
            except NoConvergence:
                return None
        return profile(float(z[0]), float(z[1]), t1, x0, v0, lim)

    def _composite(self, lead: RunningSafety, tol: float) -> Optional[FixedTimeResult]:
        lim, T = self.lim, self.T
        phi = lim.phi
        if phi <= 0.0:
            return None
        r0, r1 = lead.x0 - lim.eps, lead.v
        entries: dict = {}

        def margin_ok(arcs) -> bool:
            return all(_arc_margin(arc, r0, r1, phi) >= -TOL for arc in arcs)

        def entry(t1):
            if t1 not in entries:
                bld = self._entry_arc(t1, r0, r1)
                entries[t1] = bld if bld is not None and margin_ok(bld.arcs) else None
            return entries[t1]

        def pieces(t1, t2):
            if not (0.0 <= t1 <= t2 <= T):
                return None
            bld = entry(t1)
            if bld is None:
                return None
            b0 = bld.v - r1
            if not lim.u_min - 1e-9 <= -b0 / phi <= lim.u_max + 1e-9:
                return None
            ride = Arc(ArcKind.SAFETY_BOUNDARY, t1, t2, phi, b0, r1, bld.x)
            x2, v2, _ = ride.end_state()
            if not lim.v_min - 1e-9 <= v2 <= lim.v_max + 1e-9:
                return None
            if T - t2 <= 1e-9:
                if any(c.g(x2, v2) > tol for c in self.cons):
                    return None
                return bld, ride, None, self._cost(bld.arcs + [ride], v2)
            sub = FixedTimeProblem(x2, v2, T - t2, lim, self.w, self.v_ref, self.cons, self.newton)
            res = sub.solve(tol)
            if res is None:
                return None
            tail = [dataclasses.replace(a, t_start=a.t_start + t2, t_end=a.t_end + t2)
                    for a in res.build.arcs]
            if not margin_ok(tail):
                return None
            return bld, ride, res, self._cost(bld.arcs + [ride] + tail, res.v_T)

        def total(z):
            p = pieces(float(z[0]), float(z[1]))
            return math.inf if p is None else p[3]

        # tangent entries are usually only valid early, hence the geometric entry grid
        entry_grid = np.unique(np.concatenate([[0.0], np.geomspace(1e-3 * T, T, 10),
                                               np.linspace(0.0, T, 7)]))
        exit_grid = np.linspace(0.0, T, 9)
        best, z_best = math.inf, None
        for t1 in entry_grid:
            if entry(float(t1)) is None:
                continue
            for t2 in np.concatenate([[t1], exit_grid[exit_grid > t1]]):
                f = total((t1, t2))
                if f < best:
                    best, z_best = f, (float(t1), float(t2))
        if z_best is None:
            return None
        opt = minimize(lambda z: min(total(z), 1e12), np.array(z_best), method="Nelder-Mead",
                       options={"xatol": 1e-7, "fatol": 1e-10, "maxiter": 400,
                                "initial_simplex": [z_best, (z_best[0] + 0.05 * T, z_best[1]),
                                                    (z_best[0], z_best[1] + 0.05 * T)]})
        z = opt.x if opt.fun < best else z_best
        bld, ride, res, _ = pieces(float(z[0]), float(z[1]))
        t2 = ride.t_end
        out = _Builder(self.x0, self.v0)
        out.arcs = list(bld.arcs) + ([ride] if ride.duration > 0.0 else [])
        out.tags = set(bld.tags) | {"safety"}
        if res is None:
            out.x, out.v, _ = ride.end_state()
            return FixedTimeResult(0.0, ride.end_state()[2], out, out.x, out.v, (), ())
        out.arcs += [dataclasses.replace(a, t_start=a.t_start + t2, t_end=a.t_end + t2)
                     for a in res.build.arcs]
        out.tags |= res.build.tags
        out.x, out.v = res.x_T, res.v_T
        # the final free arc carries the costates; express its line in absolute time
        return FixedTimeResult(res.a, res.b - res.a * t2, out, res.x_T, res.v_T, res.active,
                               res.multipliers)

    def solve(self, tol: float = 1e-7) -> Optional[FixedTimeResult]:
        eq = tuple(k for k, c in enumerate(self.cons) if c.equality)
        ineq = [k for k, c in enumerate(self.cons) if not c.equality]
        for size in range(len(ineq) + 1):
            for extra in itertools.combinations(ineq, size):
                S = tuple(sorted(eq + extra))
                if len(S) > 2:
                    continue
                cand = self._candidate(S)
                if cand is not None and self._valid(cand, tol):
                    return cand
        return None


def _solution(build: _Builder, tf: float, label: CaseLabel, objective: float,
              active: tuple = ()) -> LongitudinalSolution:
    arcs = tuple(build.arcs)
    return LongitudinalSolution(arcs, 0.0, tf, build.x, build.v, label, objective, active)


def _check_bounds(sol: LongitudinalSolution, lim: VehicleLimits) -> bool:
    return bound_violation(sol, lim) <= TOL


# ---------------------------------------------------------------------------
# CAV C, free terminal time


def _c_objective(sol_energy: float, tf: float, v_T: float, v_flow: float, wts: CWeights) -> float:
    return wts.alpha_t * tf + 0.5 * wts.alpha_v * (v_T - v_flow) ** 2 + sol_energy


def unconstrained_control(alpha_t: float, v0: float, v_flow: float, limits: VehicleLimits) -> float:
    """Constant control of the unconstrained case, clipped to the bounds."""
    mag = math.sqrt(2.0 * alpha_t)
    if v_flow >= v0:
        return min(mag, limits.u_max)
    return -min(mag, -limits.u_min)


def _unconstrained_candidate(c: VehicleState, v_flow: float, wts: CWeights, lim: VehicleLimits):
    at, av = wts.alpha_t, wts.alpha_v
    dv = v_flow - c.v
    if dv == 0.0 or av == 0.0:
        tf, u = 0.0, 0.0
    else:
        u = unconstrained_control(at, c.v, v_flow, lim)
        if u == 0.0:
            return None, math.inf
        # stationary point of J(tf) for a constant control u
        tf = max((av * u * dv - at - 0.5 * u * u) / (av * u * u), 0.0)
    bld = _Builder(c.x, c.v)
    if tf > 0:
        bld.affine(0.0, u, 0.0, tf, lim)
    else:
        bld.arcs.append(Arc(ArcKind.CONST_V, 0.0, 0.0, 0.0, 0.0, c.v, c.x))
    if abs(u) >= lim.u_max - 1e-12 and u > 0:
        label = CaseLabel.UMAX_ARC
    elif u < 0 and abs(u) >= -lim.u_min - 1e-12:
        label = CaseLabel.UMIN_ARC
    else:
        label = CaseLabel.UNCONSTRAINED
    J = _c_objective(bld.arcs[0].energy() if tf > 0 else 0.0, tf, bld.v, v_flow, wts)
    return _solution(bld, tf, label, J), tf


class _CEquality:
    """Stationarity, terminal safety and transversality residuals for C in (a, b, tf)."""

    def __init__(self, c, u, v_flow, wts, lim):
        self.c, self.u, self.vf, self.w, self.lim = c, u, v_flow, wts, lim

    def residual(self, z):
        a, b, T = z
        if not (T > 1e-6) or not math.isfinite(T) or T > 1e4:
            raise ValueError("terminal time out of range")
        lim, w = self.lim, self.w
        bld = profile(a, b, T, self.c.x, self.c.v, lim)
        raw = a * T + b
        uT = min(max(raw, lim.u_min), lim.u_max)
        if bld.arcs[-1].kind == ArcKind.CONST_V and bld.arcs[-1].duration > 0:
            uT = 0.0
        vT, xT = bld.v, bld.x
        r1 = raw + w.alpha_v * (vT - self.vf) + lim.phi * a
        r2 = xT + lim.phi * vT + lim.eps - self.u.x - self.u.v * T
        ham = 0.5 * uT * uT + w.alpha_t + a * vT - raw * uT
        r3 = ham - a * self.u.v
        return np.array([r1, r2, r3])


def _c_feasible(sol: LongitudinalSolution, u: VehicleState, lim: VehicleLimits) -> bool:
    if not _check_bounds(sol, lim):
        return False
    if sol.tf <= 0.0:
        return u.x - sol.terminal_x - safety_distance(lim, sol.terminal_v) >= -TOL
    return running_gap_violation(sol, u.x, u.v, lim) <= TOL


def solve_cav_c(c: VehicleState, u: VehicleState, v_flow: float, weights: CWeights,
                limits: VehicleLimits, t_max: float = 15.0,
                newton: NewtonConfig = INNER_NEWTON) -> LongitudinalSolution:
    """Free-terminal-time OCP of the lane-changing vehicle behind U."""
    if u.v >= v_flow:
        raise ContractError("requires v_U < v_flow")
    if not limits.v_min <= c.v <= limits.v_max:
        raise ContractError("initial speed outside the speed bounds")
    if u.x - c.x < safety_distance(limits, c.v) - TOL:
        raise Infeasible("initial-safety", "C starts inside the safety distance of U")

    too_long = False
    sol, tf = _unconstrained_candidate(c, v_flow, weights, limits)
    if sol is not None:
        if tf > t_max:
            too_long = True
        elif _c_feasible(sol, u, limits):
            # optimum of a relaxation that is feasible for the full problem
            return sol

    value = _CValue(c, u, v_flow, weights, limits, newton)
    found, descending_at_end = value.local_minima(t_max)
    if descending_at_end:
        # the cost still falls at T_max, so tf <= T_max is active
        too_long = True
        edge = value.solution(t_max)
        if edge is not None:
            found.append(edge)
    candidates = [s for s in found if _c_feasible(s, u, limits)]
    if not candidates:
        if too_long:
            raise Infeasible("time", "stationary terminal time exceeds T_max")
        raise Infeasible("no-root", "no feasible stationary point")
    best = min(candidates, key=lambda s: (s.objective_value, s.tf))
    log.debug("solve_cav_c: %d candidates, best %s tf=%.4f J=%.6f", len(candidates),
              best.case_label.value, best.tf, best.objective_value)
    return best


class _CValue:
    """Optimal cost of C as a function of the terminal time.

    For each T the fixed-time problem with the terminal safety inequality is
    solved; the residual of the transversality condition is then dV/dT.  It
    jumps where the terminal constraint activates on a saturated control, so
    minima are bracketed on a grid rather than found by Newton on the smooth
    equality system alone.
    """

    def __init__(self, c, u, v_flow, wts, lim, newton: NewtonConfig = INNER_NEWTON):
        self.eqs = _CEquality(c, u, v_flow, wts, lim)
        self.newton = newton

    def fixed(self, T: float) -> Optional[FixedTimeResult]:
        e = self.eqs
        con = TerminalConstraint(1.0, e.lim.phi, e.u.x + e.u.v * T - e.lim.eps,
                                 name="terminal_safety")
        prob = FixedTimeProblem(e.c.x, e.c.v, T, e.lim, e.w.alpha_v, e.vf, [con], self.newton)
        return prob.solve_running(RunningSafety(e.u.x, e.u.v))

    def slope(self, T: float) -> Optional[float]:
        res = self.fixed(T)
        if res is None:
            return None
        # transversality residual from the terminal arc: the Hamiltonian at T
        # with lambda_x = a and lambda_v = -(a*T + b), less the constraint drift
        raw = res.a * T + res.b
        u_T = res.build.arcs[-1].end_state()[2]
        ham = 0.5 * u_T * u_T + self.eqs.w.alpha_t + res.a * res.v_T - raw * u_T
        return float(ham - res.a * self.eqs.u.v)

    def solution(self, T: float) -> Optional[LongitudinalSolution]:
        res = self.fixed(T)
        if res is None:
            return None
        e = self.eqs
        energy = sum(arc.energy() for arc in res.build.arcs)
        J = _c_objective(energy, T, res.v_T, e.vf, e.w)
        active = ("terminal_safety",) if res.active else ()
        label = _label_from_tags(res.build.tags, bool(active), CaseLabel.UNCONSTRAINED)
        return _solution(res.build, T, label, J, active)

    def local_minima(self, t_max: float, n_grid: int = 40) -> tuple[list, bool]:
        lo = min(0.05, t_max / 10)
        grid = np.unique(np.concatenate([np.geomspace(lo, min(2.0, t_max), n_grid // 4),
                                         np.linspace(lo, t_max, n_grid)]))
        vals = [self.slope(float(T)) for T in grid]

        def f(T):
            r = self.slope(T)
            if r is None:
                raise ValueError("fixed-time solve failed")
            return r

        out = []
        for k in range(len(grid) - 1):
            f0, f1 = vals[k], vals[k + 1]
            if f0 is None or f1 is None or not (f0 < 0.0 <= f1):
                continue
            try:
                T = brentq(f, float(grid[k]), float(grid[k + 1]), xtol=1e-12)
            except ValueError:
                continue
            sol = self.solution(T)
            if sol is not None:
                out.append(sol)
        end = vals[-1]
        return out, end is not None and end < 0.0


# ---------------------------------------------------------------------------
# fixed-time tracking problems


def _tracking_solution(prob: FixedTimeProblem, beta: float, v_flow: float, names: Sequence[str],
                       lead: Optional[RunningSafety] = None):
    res = prob.solve() if lead is None else prob.solve_running(lead)
    if res is None:
        raise Infeasible("no-root", "no KKT point for the fixed-time problem")
    energy = sum(arc.energy() for arc in res.build.arcs)
    J = beta * (res.v_T - v_flow) ** 2 + energy
    active = tuple(names[k] for k in res.active)
    label = _label_from_tags(res.build.tags, bool(active), CaseLabel.UNCONSTRAINED)
    sol = _solution(res.build, prob.T, label, J, active)
    if not _check_bounds(sol, prob.lim):
        raise Infeasible("bounds", "speed bound violated by the optimal profile")
    return sol


def _trivial(state: VehicleState, v_flow: float, beta: float) -> LongitudinalSolution:
    arc = Arc(ArcKind.CONST_V, 0.0, 0.0, 0.0, 0.0, state.v, state.x)
    return LongitudinalSolution((arc,), 0.0, 0.0, state.x, state.v, CaseLabel.UNCONSTRAINED,
                                beta * (state.v - v_flow) ** 2)


def solve_tracking_i(state: VehicleState, xC_tf: float, vC_tf: float, tf: float,
                     weights: TrackingWeights, limits: VehicleLimits, v_flow: float,
                     leader: Optional[VehicleState] = None,
                     c_limits: Optional[VehicleLimits] = None) -> LongitudinalSolution:
    """Front vehicle of the pair: end at least delta_C ahead of C."""
    c_limits = c_limits or limits
    need = xC_tf + safety_distance(c_limits, vC_tf)
    if leader is not None and leader.x - state.x < safety_distance(limits, state.v) - TOL:
        raise Infeasible("initial-safety", "i starts too close to its leader")
    if tf <= 0.0:
        if state.x < need - TOL:
            raise Infeasible("terminal-gap", "zero horizon and gap not met")
        return _trivial(state, v_flow, weights.beta)
    cons = [TerminalConstraint(-1.0, 0.0, -need, name="gap_to_C")]
    names = ["gap_to_C"]
    if leader is not None:
        cons.append(TerminalConstraint(1.0, limits.phi, leader.x + leader.v * tf - limits.eps,
                                       name="leader"))
        names.append("leader")
    prob = FixedTimeProblem(state.x, state.v, tf, limits, 2.0 * weights.beta, v_flow, cons)
    lead = None if leader is None else RunningSafety(leader.x, leader.v)
    sol = _tracking_solution(prob, weights.beta, v_flow, names, lead)
    if leader is not None and running_gap_violation(sol, leader.x, leader.v, limits) > TOL:
        raise Infeasible("running-safety", "i would close in on its leader")
    return sol


def solve_tracking_i1(state: VehicleState, xC_tf: float, vC_tf: float, tf: float,
                      weights: TrackingWeights, limits: VehicleLimits,
                      v_flow: float) -> LongitudinalSolution:
    """Rear vehicle of the pair: end at least delta_{i+1} behind C, not slower than v_th."""
    if tf <= 0.0:
        if xC_tf - state.x < safety_distance(limits, state.v) - TOL or state.v < weights.v_th:
            raise Infeasible("terminal-gap", "zero horizon and gap not met")
        return _trivial(state, v_flow, weights.beta)
    cons = [
        TerminalConstraint(1.0, limits.phi, xC_tf - limits.eps, name="gap_to_C"),
        TerminalConstraint(0.0, -1.0, -weights.v_th, name="v_th"),
    ]
    prob = FixedTimeProblem(state.x, state.v, tf, limits, 2.0 * weights.beta, v_flow, cons)
    return _tracking_solution(prob, weights.beta, v_flow, ["gap_to_C", "v_th"])


def solve_cav_c_relaxed(c: VehicleState, u: VehicleState, v_flow: float, tf: float,
                        weights: TrackingWeights, limits: VehicleLimits) -> LongitudinalSolution:
    """Fixed-time tracking solve for C with safety behind U."""
    if u.x - c.x < safety_distance(limits, c.v) - TOL:
        raise Infeasible("initial-safety", "C starts inside the safety distance of U")
    if tf <= 0.0:
        return _trivial(c, v_flow, weights.beta)
    cons = [TerminalConstraint(1.0, limits.phi, u.x + u.v * tf - limits.eps, name="terminal_safety")]
    prob = FixedTimeProblem(c.x, c.v, tf, limits, 2.0 * weights.beta, v_flow, cons)
    sol = _tracking_solution(prob, weights.beta, v_flow, ["terminal_safety"],
                             RunningSafety(u.x, u.v))
    if running_gap_violation(sol, u.x, u.v, limits) > TOL:
        raise Infeasible("running-safety", "relaxed trajectory violates safety behind U")
    return sol
