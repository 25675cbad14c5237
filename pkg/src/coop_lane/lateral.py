"""Lateral phase: kinematic steering model, a numeric lateral OCP and the lateral start time.

The steering rate is a symmetric bang-bang sequence (+r, -r, +r over quarter,
half, quarter of the horizon), so the steering angle is a triangle wave that
is antisymmetric about the midpoint and returns to zero exactly.  For a given
horizon the peak angle is found by root finding on y(T) = l; an outer bounded
search picks the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq, minimize_scalar

from .core_model import ContractError, Infeasible, LongitudinalSolution, eval_trajectory

LATERAL_TOL = 1e-3


@dataclass(frozen=True)
class LateralState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    phi: float = 0.0


@dataclass(frozen=True)
class LateralConfig:
    L_w: float = 2.7
    l: float = 3.5
    v: float = 30.0
    phi_max: float = 0.6
    theta_max: float = 0.3
    rho_L: float = 0.5
    T_fmax_L: float = 6.0
    eps_v: float = 9.0
    aggressiveness: str = "conservative"
    dt: float = 0.01

    def __post_init__(self):
        if self.l < 0 or self.v <= 0 or self.L_w <= 0:
            raise ContractError("need l >= 0, v > 0, L_w > 0")
        if not 0.0 <= self.rho_L <= 1.0:
            raise ContractError("rho_L must lie in [0, 1]")
        if self.aggressiveness not in ("conservative", "aggressive"):
            raise ContractError(f"unknown aggressiveness {self.aggressiveness!r}")
        if not (0 < self.phi_max < math.pi / 2 and 0 < self.theta_max < math.pi / 2):
            raise ContractError("angle limits must lie in (0, pi/2)")

    @property
    def w_phi(self) -> float:
        return self.rho_L / self.phi_max**2

    @property
    def w_tf(self) -> float:
        return (1.0 - self.rho_L) / self.T_fmax_L


def _rhs(s: np.ndarray, omega: float, v: float, L_w: float) -> np.ndarray:
    _, _, th, ph = s
    return np.array([v * math.cos(th), v * math.sin(th), v * math.tan(ph) / L_w, omega])


def integrate_lateral(state0: LateralState, omega: Sequence[float], dt: float, v: float,
                      L_w: float, phi_max: float = math.pi / 2 - 1e-6) -> tuple[np.ndarray, bool]:
    """RK4 with the steering rate held constant over each step.

    Returns rows (x, y, theta, phi) including the initial state, and whether
    phi had to be clamped to its bound.
    """
    if dt <= 0:
        raise ContractError("dt must be positive")
    s = np.array([state0.x, state0.y, state0.theta, state0.phi], dtype=float)
    out = np.empty((len(omega) + 1, 4))
    out[0] = s
    clamped = False
    for k, w in enumerate(omega):
        k1 = _rhs(s, w, v, L_w)
        k2 = _rhs(s + 0.5 * dt * k1, w, v, L_w)
        k3 = _rhs(s + 0.5 * dt * k2, w, v, L_w)
        k4 = _rhs(s + dt * k3, w, v, L_w)
        s = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if abs(s[3]) > phi_max:
            s[3] = math.copysign(phi_max, s[3])
            clamped = True
        out[k + 1] = s
    return out, clamped


def steering_profile(peak: float, T: float, n_quarter: int) -> tuple[np.ndarray, float]:
    """Piecewise-constant steering rate giving a triangle steering angle of height ``peak``."""
    h = T / (4 * n_quarter)
    r = peak / (n_quarter * h)
    omega = np.concatenate([np.full(n_quarter, r), np.full(2 * n_quarter, -r),
                            np.full(n_quarter, r)])
    return omega, h


@dataclass(frozen=True)
class LateralSolution:
    t_f: float
    peak_phi: float
    dt: float
    omega: np.ndarray
    states: np.ndarray
    cost: float

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.states)) * self.dt

    def terminal_error(self, l: float) -> tuple[float, float, float]:
        _, y, th, ph = self.states[-1]
        return abs(y - l), abs(th), abs(ph)


class _Shooter:
    """Terminal lateral offset of the triangle steering wave.

    With phi piecewise linear the heading has the closed form
    theta = (v/L_w) * (ln cos phi_a - ln cos phi) / slope on each ramp, so only
    y needs quadrature.  The heading is symmetric about T/2.
    """

    def __init__(self, cfg: LateralConfig, n_quad: int = 801):
        self.cfg = cfg
        self.s = np.linspace(0.0, 1.0, n_quad)

    def n_quarter(self, T: float) -> int:
        return max(25, int(math.ceil(T / (4 * self.cfg.dt))))

    def theta_peak(self, p: float, T: float) -> float:
        if p == 0.0:
            return 0.0
        c = self.cfg
        return c.v / c.L_w * (T / (2.0 * p)) * (-math.log(math.cos(p)))

    def y_end(self, p: float, T: float) -> float:
        c = self.cfg
        if p == 0.0:
            return 0.0
        q = T / 4.0
        k = p / q
        gain = c.v / c.L_w
        t1 = self.s * q
        th1 = gain * (-np.log(np.cos(k * t1))) / k
        # second ramp: phi falls from p to 0 over [q, 2q]
        phi2 = p - k * t1
        th2 = th1[-1] + gain * (np.log(np.cos(phi2)) - math.log(math.cos(p))) / k
        half = simpson(np.sin(th1), x=t1) + simpson(np.sin(th2), x=t1)
        return 2.0 * c.v * half

    def run(self, peak: float, T: float):
        c = self.cfg
        m = self.n_quarter(T)
        omega, h = steering_profile(peak, T, m)
        states, _ = integrate_lateral(LateralState(), omega, h, c.v, c.L_w)
        return omega, h, states

    def peak_for(self, T: float) -> Optional[float]:
        """Steering peak that lands exactly one lane over, or None if out of bounds."""
        c = self.cfg
        hi = c.phi_max
        if self.theta_peak(hi, T) > c.theta_max:
            # heading bound binds first; theta_peak is increasing in p
            hi = brentq(lambda p: self.theta_peak(p, T) - c.theta_max, 1e-12, hi, xtol=1e-14)
        if self.y_end(hi, T) < c.l:
            return None
        return brentq(lambda p: self.y_end(p, T) - c.l, 0.0, hi, xtol=1e-14, rtol=1e-13)

    def cost(self, p: float, T: float) -> float:
        # the triangle wave has mean square peak^2 / 3
        c = self.cfg
        return 0.5 * c.w_phi * p * p * T / 3.0 + c.w_tf * T


def solve_lateral(cfg: LateralConfig) -> LateralSolution:
    """Minimise steering effort plus weighted duration subject to y = l, theta = phi = 0 at the end."""
    if cfg.l == 0.0:
        return LateralSolution(0.0, 0.0, cfg.dt, np.zeros(0), np.zeros((1, 4)), 0.0)
    sh = _Shooter(cfg)
    T_hi = cfg.T_fmax_L
    if sh.peak_for(T_hi) is None:
        raise Infeasible("lateral", "lane width not reachable within the lateral time bound")
    # shortest feasible horizon: feasibility is monotone in T
    lo, hi = 1e-2, T_hi
    while hi - lo > 1e-7:
        mid = 0.5 * (lo + hi)
        if sh.peak_for(mid) is None:
            lo = mid
        else:
            hi = mid
    T_min = hi

    def J(T):
        p = sh.peak_for(T)
        return math.inf if p is None else sh.cost(p, T)

    if T_hi - T_min < 1e-9:
        T_best = T_min
    else:
        res = minimize_scalar(J, bounds=(T_min, T_hi), method="bounded",
                              options={"xatol": 1e-6})
        T_best = min((T_min, T_hi, float(res.x)), key=J)
    p = sh.peak_for(T_best)
    if p is None:
        raise Infeasible("lateral", "no steering profile meets the terminal conditions")
    omega, h, states = sh.run(p, T_best)
    sol = LateralSolution(T_best, p, h, omega, states, sh.cost(p, T_best))
    ey, eth, eph = sol.terminal_error(cfg.l)
    if max(ey, eth, eph) > LATERAL_TOL:
        raise Infeasible("lateral", f"terminal error {max(ey, eth, eph):.2e}")
    return sol


def _first_safe(gap, t0: float, tf: float, eps_v: float, dt: float = 0.01) -> float:
    if gap(t0) >= eps_v:
        return t0
    n = max(1, int(math.ceil((tf - t0) / dt - 1e-9)))
    ts = np.linspace(t0, tf, n + 1)
    prev = t0
    for t in ts[1:]:
        if gap(float(t)) >= eps_v:
            return brentq(lambda s: gap(s) - eps_v, prev, float(t), xtol=1e-10)
        prev = float(t)
    return tf


def safe_times(traj_c: LongitudinalSolution, traj_i: Optional[LongitudinalSolution],
               traj_i1: Optional[LongitudinalSolution], traj_u: Optional[LongitudinalSolution],
               eps_v: float) -> tuple[float, float, float]:
    """Earliest times at which C is eps_v clear of i*, i*+1 and U; absent vehicles give t0."""
    t0, tf = traj_c.t0, traj_c.tf

    def xc(t):
        return eval_trajectory(traj_c, t)[0]

    def tau(front, rear):
        return _first_safe(lambda t: front(t) - rear(t), t0, tf, eps_v)

    def pos(sol):
        return lambda t: eval_trajectory(sol, t)[0]

    t_i = t0 if traj_i is None else tau(pos(traj_i), xc)
    t_i1 = t0 if traj_i1 is None else tau(xc, pos(traj_i1))
    t_u = t0 if traj_u is None else tau(pos(traj_u), xc)
    return t_i, t_i1, t_u


def lateral_start_time(taus: Sequence[float], tf_star: float, aggressiveness: str) -> float:
    if aggressiveness == "conservative":
        return tf_star
    if aggressiveness == "aggressive":
        return max(taus)
    raise ContractError(f"unknown aggressiveness {aggressiveness!r}")
