import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from coop_lane.core_model import (
    ArcKind,
    CaseLabel,
    ContractError,
    Infeasible,
    Lane,
    VehicleLimits,
    VehicleState,
    eval_trajectory,
    safety_distance,
)
from coop_lane.instances import (
    REF_C,
    REF_LIMITS,
    REF_RELAXED_TF,
    REF_RELAXED_V,
    REF_U,
    REF_V,
    REF_V_FLOW,
    REF_WEIGHTS,
    compare_feasible,
    random_tracking_i,
    random_tracking_i1,
)
from coop_lane.numerics import TranscriptionConfig, transcription_oracle
from coop_lane.ocp_longitudinal import (
    CWeights,
    TrackingWeights,
    solve_cav_c,
    solve_cav_c_relaxed,
    solve_tracking_i,
    solve_tracking_i1,
    tracking_beta,
    unconstrained_control,
)
from coop_lane.oracle_specs import cav_c_relaxed_spec, cav_c_spec

TW = TrackingWeights.from_limits(0.5, REF_LIMITS)


def sampled_u(sol, dt=0.01):
    t = np.arange(sol.t0, sol.tf + 1e-12, dt)
    return t, np.array([eval_trajectory(sol, float(s))[2] for s in t])


# weights


def test_c_weight_ratios():
    w = CWeights(0.55, 0.5, 0.02)
    assert w.alpha_t == pytest.approx(27.5) and w.alpha_v == pytest.approx(25.0)
    with pytest.raises(ContractError):
        CWeights(0.1, 0.1, 0.0)


def test_beta_formula():
    assert tracking_beta(0.5, -7.0, 3.3) == pytest.approx(49.0, abs=1e-12)
    assert TrackingWeights.from_limits(0.5, VehicleLimits()).beta == pytest.approx(49.0, abs=1e-12)
    with pytest.raises(ContractError):
        TrackingWeights.from_limits(1.0, VehicleLimits())


# CAV C, free terminal time


def test_unconstrained_control_identity():
    assert unconstrained_control(2.0, 20.0, 30.0, VehicleLimits()) == 2.0
    assert unconstrained_control(2.0, 30.0, 20.0, VehicleLimits()) == -2.0
    # clipped to the acceleration bound
    assert unconstrained_control(10.0, 20.0, 30.0, VehicleLimits()) == 3.3


def test_reference_maneuver_speed_and_oracle_agreement():
    sol = solve_cav_c(REF_C, REF_U, REF_V_FLOW, REF_WEIGHTS, REF_LIMITS)
    assert sol.terminal_v == pytest.approx(REF_V, rel=0.02)
    orc = transcription_oracle(cav_c_spec(REF_C, REF_U, REF_V_FLOW, REF_WEIGHTS.alpha_t,
                                          REF_WEIGHTS.alpha_v, REF_LIMITS, 15.0))
    assert sol.objective_value == pytest.approx(orc.objective, rel=0.02)
    assert sol.tf == pytest.approx(orc.tf, rel=0.02)


def test_reference_maneuver_relaxed_speed():
    sol = solve_cav_c_relaxed(REF_C, REF_U, REF_V_FLOW, REF_RELAXED_TF, TW, REF_LIMITS)
    assert sol.tf == REF_RELAXED_TF
    assert sol.terminal_v == pytest.approx(REF_RELAXED_V, rel=0.02)


def test_at_flow_speed_with_free_road_does_nothing():
    lim = VehicleLimits()
    c = VehicleState("C", 0.0, 30.0, Lane.SLOW)
    u = VehicleState("U", safety_distance(lim, 30.0) + 30.0 * 15.0 + 10.0, 16.0, Lane.SLOW)
    sol = solve_cav_c(c, u, 30.0, REF_WEIGHTS, lim)
    assert sol.terminal_v == pytest.approx(30.0, abs=1e-9)
    orc = transcription_oracle(cav_c_spec(c, u, 30.0, REF_WEIGHTS.alpha_t, REF_WEIGHTS.alpha_v, lim, 15.0))
    assert np.max(np.abs(orc.u)) <= 1e-3
    assert sol.objective_value == pytest.approx(orc.objective, abs=1e-4)


def test_terminal_time_bound_is_respected():
    sol = solve_cav_c(REF_C, REF_U, REF_V_FLOW, REF_WEIGHTS, REF_LIMITS, t_max=1.0)
    assert sol.tf == pytest.approx(1.0, abs=1e-12)


def test_slow_flow_is_rejected():
    with pytest.raises(ContractError):
        solve_cav_c(REF_C, REF_U, 15.0, REF_WEIGHTS, REF_LIMITS)


def test_start_inside_safety_distance():
    u = VehicleState("U", 5.0, 16.0, Lane.SLOW)
    with pytest.raises(Infeasible):
        solve_cav_c(REF_C, u, REF_V_FLOW, REF_WEIGHTS, REF_LIMITS)


def test_terminal_safety_equality_regime():
    lim = VehicleLimits(phi=0.6)
    c = VehicleState("C", 0.0, 24.0, Lane.SLOW)
    u = VehicleState("U", 46.0, 16.0, Lane.SLOW)
    sol = solve_cav_c(c, u, 31.5, CWeights(0.25, 0.85, 0.75), lim)
    assert sol.case_label == CaseLabel.TERMINAL_SAFETY_EQUALITY
    gap = u.x + u.v * sol.tf - sol.terminal_x - safety_distance(lim, sol.terminal_v)
    assert abs(gap) <= 1e-6


def unconstrained_arcs_are_affine(sol):
    for arc in sol.arcs:
        if arc.kind != ArcKind.POLY or arc.duration < 0.05:
            continue
        t = np.linspace(arc.t_start, arc.t_end, 21)
        u = np.array([arc.state(float(s))[2] for s in t])
        assert np.max(np.abs(np.diff(u, 2))) <= 1e-9


def test_affine_control_on_free_arcs():
    rng = np.random.default_rng(7)
    for gen in (random_tracking_i, random_tracking_i1):
        for _ in range(15):
            inst = gen(rng)
            try:
                sol = inst.solve()
            except Infeasible:
                continue
            unconstrained_arcs_are_affine(sol)


# tracking problems


def test_tracking_i_already_clear_costs_nothing():
    lim = VehicleLimits()
    i = VehicleState("i", 100.0, 30.0, Lane.FAST)
    sol = solve_tracking_i(i, 0.0, 30.0, 3.0, TW, lim, 30.0)
    assert sol.objective_value == pytest.approx(0.0, abs=1e-12)
    _, u = sampled_u(sol)
    assert np.max(np.abs(u)) <= 1e-12


def test_tracking_i1_already_clear_costs_nothing():
    lim = VehicleLimits()
    i1 = VehicleState("i1", -100.0, 30.0, Lane.FAST)
    sol = solve_tracking_i1(i1, 90.0, 30.0, 3.0, TW, lim, 30.0)
    assert sol.objective_value == pytest.approx(0.0, abs=1e-12)
    _, u = sampled_u(sol)
    assert np.max(np.abs(u)) <= 1e-12


def test_tracking_i1_threshold_equal_to_flow_speed():
    lim = VehicleLimits()
    tw = TrackingWeights.from_limits(0.5, lim, v_th=30.0)
    i1 = VehicleState("i1", -30.0, 30.0, Lane.FAST)
    # at constant speed i+1 would end 10 m short of the required gap
    xC_tf = -30.0 + 90.0 + safety_distance(lim, 30.0) - 10.0
    sol = solve_tracking_i1(i1, xC_tf, 28.0, 3.0, tw, lim, 30.0)
    assert sol.terminal_v == pytest.approx(30.0, abs=1e-9)
    assert xC_tf - sol.terminal_x - safety_distance(lim, sol.terminal_v) >= -1e-6
    assert "v_th" in sol.active and "gap_to_C" in sol.active


def test_tracking_i_unreachable_gap():
    lim = VehicleLimits()
    i = VehicleState("i", 0.0, 20.0, Lane.FAST)
    with pytest.raises(Infeasible):
        solve_tracking_i(i, 200.0, 30.0, 2.0, TW, lim, 30.0)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10_000))
def test_tracking_i_respects_leader(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        inst = random_tracking_i(rng)
        if not inst.spec.running:
            continue
        try:
            sol = inst.solve()
        except Infeasible:
            continue
        # the running row x + phi v <= r0 + r1 t is the safety line behind the leader
        lead = inst.spec.running[0]
        t, _ = sampled_u(sol)
        x = np.array([eval_trajectory(sol, float(s))[0] for s in t])
        v = np.array([eval_trajectory(sol, float(s))[1] for s in t])
        assert np.max(x + lead.q * v - lead.r0 - lead.r1 * t) <= 1e-6
        return


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10_000))
def test_tracking_i1_keeps_threshold_speed(seed):
    rng = np.random.default_rng(seed)
    inst = random_tracking_i1(rng)
    try:
        sol = inst.solve()
    except Infeasible:
        return
    v_th = -inst.spec.terminal[1].r0
    assert sol.terminal_v >= v_th - 1e-9


# relaxed problem of C


def test_relaxed_long_horizon_cost_vanishes():
    lim = VehicleLimits()
    c = VehicleState("C", 0.0, 29.8, Lane.SLOW)
    u = VehicleState("U", 3000.0, 16.0, Lane.SLOW)
    sol = solve_cav_c_relaxed(c, u, 30.0, 60.0, TW, lim)
    assert sol.objective_value <= 1e-3
    orc = transcription_oracle(cav_c_relaxed_spec(c, u, 30.0, 60.0, TW.beta, lim))
    assert orc.objective <= 1e-3
    assert sol.terminal_v == pytest.approx(30.0, abs=0.01)


def test_relaxed_zero_gap_is_infeasible():
    lim = VehicleLimits()
    c = VehicleState("C", 0.0, 25.0, Lane.SLOW)
    u = VehicleState("U", 0.0, 16.0, Lane.SLOW)
    with pytest.raises(Infeasible):
        solve_cav_c_relaxed(c, u, 30.0, 4.0, TW, lim)


def padded_copy_feasible(sol, u, lim, extra):
    """Does the earlier optimum, continued at its terminal speed, stay behind U for extra seconds?"""
    gap = u.x + u.v * sol.tf - sol.terminal_x - safety_distance(lim, sol.terminal_v)
    return gap - max(sol.terminal_v - u.v, 0.0) * extra >= 0.0


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.floats(12.0, 30.0), st.floats(10.5, 24.0), st.floats(0.5, 60.0), st.floats(1.0, 8.0),
       st.floats(0.3, 1.8))
def test_relaxation_monotone(v_c, v_u, slack, tf, phi):
    lim = VehicleLimits(phi=phi)
    c = VehicleState("C", 0.0, v_c, Lane.SLOW)
    u = VehicleState("U", safety_distance(lim, v_c) + slack, v_u, Lane.SLOW)
    v_flow = max(v_u + 1.0, 28.0)
    ladder = (tf, 1.1 * tf, 1.21 * tf)
    sols = []
    for T in ladder:
        try:
            sols.append(solve_cav_c_relaxed(c, u, v_flow, T, TW, lim))
        except Infeasible:
            sols.append(None)
    for k in range(2):
        early, late = sols[k], sols[k + 1]
        if early is None or not padded_copy_feasible(early, u, lim, ladder[k + 1] - ladder[k]):
            continue
        assert late is not None
        assert late.objective_value <= early.objective_value * (1 + 1e-6) + 1e-6


def test_relaxation_not_monotone_when_padding_breaks_safety():
    # C must end faster than U; coasting on past tf would run into U, and
    # both routes agree the cost rises from tf = 2 to 2.2
    lim = VehicleLimits(phi=0.5)
    c = VehicleState("C", 0.0, 12.0, Lane.SLOW)
    u = VehicleState("U", safety_distance(lim, 12.0) + 10.0, 11.0, Lane.SLOW)
    a = solve_cav_c_relaxed(c, u, 28.0, 2.0, TW, lim)
    b = solve_cav_c_relaxed(c, u, 28.0, 2.2, TW, lim)
    assert not padded_copy_feasible(a, u, lim, 0.2)
    assert b.objective_value > a.objective_value
    oa = transcription_oracle(cav_c_relaxed_spec(c, u, 28.0, 2.0, TW.beta, lim)).objective
    ob = transcription_oracle(cav_c_relaxed_spec(c, u, 28.0, 2.2, TW.beta, lim)).objective
    assert ob > oa
    assert a.objective_value == pytest.approx(oa, rel=0.02)
    assert b.objective_value == pytest.approx(ob, rel=0.02)


# two independent routes to the same optimum


@pytest.mark.parametrize("kind", ["cav_c", "cav_c_relaxed", "tracking_i", "tracking_i1"])
def test_oracle_equivalence_sample(kind):
    rows = compare_feasible(kind, 4, seed=11, config=TranscriptionConfig())
    assert len(rows) == 4
    bad = [r for r in rows if not r.ok]
    assert not bad, bad
