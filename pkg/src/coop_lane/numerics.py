"""Damped Newton root finding and a direct-transcription reference solver.

The transcription solver is intentionally independent of the analytical
machinery in ``ocp_longitudinal``: it only knows the dynamics, the
objective and the constraints, discretised with piecewise-constant
control.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .core_model import Infeasible


class NoConvergence(Exception):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    tol_residual: float = 1e-10
    max_iters: int = 100
    damping: float = 0.5
    seeds: tuple = ()
    fd_rel_step: float = 1e-6
    min_step: float = 1e-10

    def __post_init__(self):
        if self.tol_residual <= 0:
            raise ValueError("tol_residual must be positive")


@dataclass(frozen=True)
class NewtonResult:
    root: np.ndarray
    roots: tuple
    iterations: int
    residual_norm: float


def _safe_eval(residual: Callable, x: np.ndarray) -> Optional[np.ndarray]:
    try:
        f = np.asarray(residual(x), dtype=float)
    except (ValueError, ArithmeticError, Infeasible):
        return None
    if not np.all(np.isfinite(f)):
        return None
    return f


def fd_jacobian(residual: Callable, x: np.ndarray, f0: Optional[np.ndarray] = None,
                rel_step: float = 1e-6) -> Optional[np.ndarray]:
    """Central finite-difference Jacobian, h = rel_step * max(1, |x_j|)."""
    n = x.size
    cols = []
    for j in range(n):
        h = rel_step * max(1.0, abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        fp = _safe_eval(residual, x + e)
        fm = _safe_eval(residual, x - e)
        if fp is None and fm is None:
            return None
        if fp is None:
            cols.append((f0 - fm) / h)
        elif fm is None:
            cols.append((fp - f0) / h)
        else:
            cols.append((fp - fm) / (2 * h))
    return np.column_stack(cols)


def _newton_from(residual, x, config, jacobian):
    f = _safe_eval(residual, x)
    if f is None:
        return None, 0
    for it in range(config.max_iters + 1):
        norm = float(np.max(np.abs(f)))
        if norm <= config.tol_residual:
            return x, it
        if it == config.max_iters:
            break
        J = jacobian(x) if jacobian is not None else fd_jacobian(residual, x, f, config.fd_rel_step)
        if J is None or not np.all(np.isfinite(J)):
            return None, it
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, -f, rcond=None)[0]
        merit = float(np.linalg.norm(f))
        lam = 1.0
        while True:
            xn = x + lam * dx
            fn = _safe_eval(residual, xn)
            if fn is not None and np.linalg.norm(fn) <= (1.0 - 1e-4 * lam) * merit:
                break
            lam *= config.damping
            if lam * float(np.max(np.abs(dx))) < config.min_step * max(1.0, float(np.max(np.abs(x)))):
                return None, it
        x, f = xn, fn
    return None, config.max_iters


def newton_solve(residual: Callable, seeds: Sequence, config: NewtonConfig = NewtonConfig(),
                 jacobian: Optional[Callable] = None, collect_all: bool = False) -> NewtonResult:
    """Damped Newton from each seed in turn.

    Stops at the first converged seed unless ``collect_all``; in that case
    every seed is tried and the distinct roots are returned in seed order.
    """
    seeds = list(seeds) or list(config.seeds)
    roots: list[np.ndarray] = []
    first_iters = 0
    for seed in seeds:
        x0 = np.atleast_1d(np.asarray(seed, dtype=float)).copy()
        root, iters = _newton_from(residual, x0, config, jacobian)
        if root is None:
            continue
        if not any(np.all(np.abs(root - r) <= 1e-7 * (1.0 + np.abs(r))) for r in roots):
            if not roots:
                first_iters = iters
            roots.append(root)
        if not collect_all:
            break
    if not roots:
        raise NoConvergence(f"no seed out of {len(seeds)} converged")
    f = _safe_eval(residual, roots[0])
    return NewtonResult(roots[0], tuple(roots), first_iters, float(np.max(np.abs(f))))


# ---------------------------------------------------------------------------
# direct transcription


@dataclass(frozen=True)
class LinearConstraint:
    """p*x + q*v <= r0 + r1*t (or equality), at the terminal time or on the grid."""

    p: float
    q: float
    r0: float
    r1: float = 0.0
    equality: bool = False


@dataclass(frozen=True)
class OCPSpec:
    x0: float
    v0: float
    u_min: float
    u_max: float
    v_min: float
    v_max: float
    tf: Optional[float]
    t_max: float
    time_weight: float = 0.0
    speed_weight: float = 0.0
    v_ref: float = 0.0
    terminal: tuple = ()
    running: tuple = ()


@dataclass(frozen=True)
class TranscriptionConfig:
    n_steps: int = 500
    search_steps: int = 150
    rho0: float = 10.0
    rho_factor: float = 10.0
    max_rounds: int = 9
    viol_tol: float = 1e-4
    infeasible_tol: float = 1e-3
    tf_bracket: Optional[tuple] = None
    grid_points: int = 16
    golden_tol: float = 1e-3
    record_history: bool = False

    def __post_init__(self):
        if self.n_steps < 50:
            raise ValueError("n_steps must be at least 50")


@dataclass
class OracleResult:
    objective: float
    tf: float
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    u: np.ndarray
    violation: float
    rounds: list = field(default_factory=list)


class _Discrete:
    def __init__(self, spec: OCPSpec, T: float, n: int):
        self.s, self.T, self.n = spec, T, n
        self.h = T / n
        self.t = np.linspace(0.0, T, n + 1)

    def states(self, u):
        h, s = self.h, self.s
        v = s.v0 + h * np.concatenate(([0.0], np.cumsum(u)))
        x = s.x0 + np.concatenate(([0.0], np.cumsum(h * v[:-1] + 0.5 * h * h * u)))
        return x, v

    def objective(self, u, v):
        s = self.s
        return s.time_weight * self.T + s.speed_weight * (v[-1] - s.v_ref) ** 2 + 0.5 * self.h * float(u @ u)

    def _residuals(self, x, v):
        """Signed constraint values g (feasible when g <= 0, or g == 0 for equalities)."""
        s, t = self.s, self.t
        out = [v[1:] - s.v_max, s.v_min - v[1:]]
        eq = []
        for c in s.running:
            out.append(c.p * x + c.q * v - c.r0 - c.r1 * t)
        for c in s.terminal:
            g = c.p * x[-1] + c.q * v[-1] - c.r0 - c.r1 * self.T
            (eq if c.equality else out).append(np.atleast_1d(g))
        return out, eq

    def violation(self, u):
        x, v = self.states(u)
        ineq, eq = self._residuals(x, v)
        worst = 0.0
        for g in ineq:
            worst = max(worst, float(np.max(g, initial=0.0)))
        for g in eq:
            worst = max(worst, float(np.max(np.abs(g))))
        return worst

    def penalized(self, u, rho):
        s, h, t, n = self.s, self.h, self.t, self.n
        x, v = self.states(u)
        f = self.objective(u, v)
        gx = np.zeros(n + 1)
        gv = np.zeros(n + 1)
        gv[-1] += 2.0 * s.speed_weight * (v[-1] - s.v_ref)
        pen = 0.0
        hi = np.maximum(v[1:] - s.v_max, 0.0)
        lo = np.maximum(s.v_min - v[1:], 0.0)
        pen += float(hi @ hi + lo @ lo)
        gv[1:] += 2.0 * rho * (hi - lo)
        for c in s.running:
            g = np.maximum(c.p * x + c.q * v - c.r0 - c.r1 * t, 0.0)
            pen += float(g @ g)
            gx += 2.0 * rho * c.p * g
            gv += 2.0 * rho * c.q * g
        for c in s.terminal:
            g = c.p * x[-1] + c.q * v[-1] - c.r0 - c.r1 * self.T
            if not c.equality:
                g = max(g, 0.0)
            pen += g * g
            gx[-1] += 2.0 * rho * c.p * g
            gv[-1] += 2.0 * rho * c.q * g
        # chain rule through v_k = v0 + h*sum_{j<k} u_j and the exact x update
        sv = np.cumsum(gv[::-1])[::-1][1:]
        sx = np.cumsum(gx[::-1])[::-1][1:]
        sxt = np.cumsum((gx * t)[::-1])[::-1][1:]
        grad = h * u + h * sv + h * (sxt - (t[:-1] + 0.5 * h) * sx)
        return f + rho * pen, grad


def _solve_fixed(spec: OCPSpec, T: float, n: int, config: TranscriptionConfig,
                 u_init: Optional[np.ndarray] = None) -> OracleResult:
    d = _Discrete(spec, T, n)
    if u_init is None or u_init.size != n:
        u = np.zeros(n) if u_init is None else np.interp(
            np.linspace(0, 1, n), np.linspace(0, 1, u_init.size), u_init)
    else:
        u = u_init.copy()
    u = np.clip(u, spec.u_min, spec.u_max)
    bounds = [(spec.u_min, spec.u_max)] * n
    rho = config.rho0
    rounds = []
    viol = math.inf
    for _ in range(config.max_rounds):
        history = []
        cb = (lambda xk: history.append(d.penalized(xk, rho)[0])) if config.record_history else None
        res = minimize(d.penalized, u, args=(rho,), jac=True, method="L-BFGS-B", bounds=bounds,
                       callback=cb, options={"maxiter": 20000, "ftol": 1e-15, "gtol": 1e-10,
                                             "maxcor": 30})
        u = res.x
        viol = d.violation(u)
        x, v = d.states(u)
        rounds.append({"rho": rho, "objective": d.objective(u, v), "penalized": float(res.fun),
                       "violation": viol, "history": history})
        if viol <= config.viol_tol:
            break
        rho *= config.rho_factor
    x, v = d.states(u)
    return OracleResult(d.objective(u, v), T, d.t, x, v, u, viol, rounds)


def transcription_oracle(spec: OCPSpec, config: TranscriptionConfig = TranscriptionConfig()) -> OracleResult:
    """Discretised optimum of the OCP; free terminal time via grid + golden section."""
    if spec.tf is not None:
        res = _solve_fixed(spec, spec.tf, config.n_steps, config)
        if res.violation > config.infeasible_tol:
            raise Infeasible("oracle", f"violation {res.violation:.3g} after penalty rounds")
        return res

    lo, hi = config.tf_bracket or (1e-3 * spec.t_max, spec.t_max)
    m = config.search_steps
    cache: dict = {}
    warm = {"u": None}

    def value(T: float) -> float:
        key = round(T, 12)
        if key not in cache:
            r = _solve_fixed(spec, T, m, config, warm["u"])
            ok = r.violation <= config.infeasible_tol
            if ok:
                warm["u"] = r.u
            cache[key] = r.objective if ok else math.inf
        return cache[key]

    # geometric points resolve short-horizon minima that a uniform grid steps over
    grid = np.unique(np.concatenate([np.geomspace(lo, hi, config.grid_points // 2),
                                     np.linspace(lo, hi, config.grid_points)]))
    vals = [value(float(T)) for T in grid]
    if not any(math.isfinite(f) for f in vals):
        raise Infeasible("oracle", "no feasible terminal time on the search grid")
    g = (math.sqrt(5.0) - 1.0) / 2.0

    def golden(a: float, b: float) -> list:
        c1, c2 = b - g * (b - a), a + g * (b - a)
        f1, f2 = value(c1), value(c2)
        while b - a > config.golden_tol:
            if f1 <= f2:
                b, c2, f2 = c2, c1, f1
                c1 = b - g * (b - a)
                f1 = value(c1)
            else:
                a, c1, f1 = c1, c2, f2
                c2 = a + g * (b - a)
                f2 = value(c2)
        return [(f1, c1), (f2, c2)]

    # refine every local minimum of the grid, the value need not be unimodal
    candidates = []
    last = len(grid) - 1
    for k, fk in enumerate(vals):
        if not math.isfinite(fk):
            continue
        if (k > 0 and vals[k - 1] < fk) or (k < last and vals[k + 1] < fk):
            continue
        candidates.append((fk, float(grid[k])))
        candidates += golden(float(grid[max(k - 1, 0)]), float(grid[min(k + 1, last)]))
    # a zero horizon (constraints met by the initial state) is a limit no grid reaches
    zero = value(0.0)
    if math.isfinite(zero):
        candidates.append((zero, 0.0))
    _, T_best = min(candidates)
    res = _solve_fixed(spec, T_best, config.n_steps, config, warm["u"])
    if res.violation > config.infeasible_tol:
        raise Infeasible("oracle", f"violation {res.violation:.3g} at tf={T_best:.3f}")
    return res
