import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from coop_lane.core_model import ContractError, VehicleLimits
from coop_lane.disruption import (
    DisruptionParams,
    max_position_disruption,
    position_disruption,
    speed_disruption,
    total_disruption,
    vehicle_disruption,
)

LIM = VehicleLimits()


def braking_shortfall(v0, dt, lim):
    """Kinematic oracle: integrate full braking with the speed floor and compare with cruising."""
    def rhs(_, s):
        return [s[1], lim.u_min if s[1] > lim.v_min else 0.0]

    def floor(_, s):
        return s[1] - lim.v_min
    floor.terminal = True

    r1 = solve_ivp(rhs, (0.0, dt), [0.0, v0], events=floor, rtol=1e-12, atol=1e-12)
    x, v, t = r1.y[0, -1], r1.y[1, -1], r1.t[-1]
    x += lim.v_min * (dt - t) if t < dt else 0.0
    return v0 * dt - x


# position and speed terms


def test_uniform_motion_has_no_position_disruption():
    assert position_disruption(30.0 * 4 + 5.0, 5.0, 30.0, 4.0) == 0.0


def test_position_disruption_example():
    # v0 = 30, u = -1 for 2 s: 58 m instead of 60
    assert position_disruption(58.0, 0.0, 30.0, 2.0) == pytest.approx(4.0, abs=1e-12)


def test_position_disruption_of_cubic_against_quadrature():
    a, b, v0 = 0.3, -1.2, 25.0
    r = solve_ivp(lambda t, s: [s[1], a * t + b], (0.0, 3.0), [0.0, v0], rtol=1e-12, atol=1e-12)
    x_num = r.y[0, -1]
    x = a * 27 / 6 + b * 9 / 2 + v0 * 3
    assert position_disruption(x, 0.0, v0, 3.0) == pytest.approx((x_num - 75.0) ** 2, rel=1e-8)


@pytest.mark.parametrize("v,expected", [(30.0, 0.0), (25.0, 25.0), (35.0, 25.0)])
def test_speed_disruption(v, expected):
    assert speed_disruption(v, 30.0) == expected


# d_xmax


def test_dxmax_without_floor():
    assert max_position_disruption(30.0, 2.0, 0.0, LIM) == pytest.approx(14.0, abs=1e-6)


def test_dxmax_with_floor():
    d = max_position_disruption(30.0, 4.0, 0.0, LIM)
    assert d == pytest.approx(51.4285714286, abs=1e-6)
    assert d == pytest.approx(braking_shortfall(30.0, 4.0, LIM), abs=1e-6)


def test_dxmax_at_floor_is_zero():
    assert max_position_disruption(LIM.v_min, 3.0, 0.0, LIM) == 0.0


def test_dxmax_zero_horizon():
    assert max_position_disruption(30.0, 1.0, 1.0, LIM) == 0.0


def test_dxmax_continuous_at_case_boundary():
    v0 = 30.0
    t_b = (LIM.v_min - v0) / LIM.u_min
    lo = max_position_disruption(v0, t_b * (1 - 1e-12), 0.0, LIM)
    hi = max_position_disruption(v0, t_b * (1 + 1e-12), 0.0, LIM)
    at = max_position_disruption(v0, t_b, 0.0, LIM)
    assert abs(lo - at) <= 1e-9 and abs(hi - at) <= 1e-9


@given(st.floats(10, 35), st.floats(0, 20), st.floats(0, 20))
def test_dxmax_non_decreasing(v0, t1, t2):
    a, b = sorted((t1, t2))
    assert max_position_disruption(v0, a, 0.0, LIM) <= max_position_disruption(v0, b, 0.0, LIM) + 1e-9


@given(st.floats(10.5, 35), st.floats(0.05, 15))
def test_dxmax_matches_kinematic_oracle(v0, dt):
    assert max_position_disruption(v0, dt, 0.0, LIM) == pytest.approx(braking_shortfall(v0, dt, LIM), abs=1e-6)


# vehicle disruption


def test_undisturbed_vehicle_at_flow_speed():
    assert vehicle_disruption(30.0 * 3, 30.0, 3.0, 0.0, 30.0, 0.0, 30.0, DisruptionParams(), LIM) == 0.0


def test_maximal_position_disruption_normalises_to_one():
    d_xmax = max_position_disruption(30.0, 2.0, 0.0, LIM)
    x = 60.0 - d_xmax
    params = DisruptionParams(gamma=1.0)
    assert vehicle_disruption(x, 30.0, 2.0, 0.0, 30.0, 0.0, 30.0, params, LIM) == pytest.approx(1.0, abs=1e-12)


def test_weighted_example():
    # d_x = 4 (two metres short), d_xmax = 14, v = 25 against 30
    D = vehicle_disruption(58.0, 25.0, 2.0, 0.0, 30.0, 0.0, 30.0, DisruptionParams(gamma=0.8), LIM)
    assert D == pytest.approx(0.8 * 4 / 196 + 0.2 * 25 / 400, abs=1e-12)
    assert D == pytest.approx(0.02883, abs=1e-5)


def test_zero_elapsed_time():
    assert vehicle_disruption(5.0, 20.0, 1.0, 0.0, 30.0, 1.0, 30.0, DisruptionParams(), LIM) == 0.0


def test_degenerate_speed_normaliser():
    lim = VehicleLimits(v_min=30.0, v_max=30.0)
    with pytest.raises(ContractError):
        vehicle_disruption(0.0, 30.0, 1.0, 0.0, 30.0, 0.0, 30.0, DisruptionParams(), lim)


@given(st.floats(10.5, 35), st.floats(0.1, 10), st.floats(0, 1), st.floats(0, 1), st.floats(10, 35),
       st.floats(0, 1))
def test_vehicle_disruption_in_unit_interval(v0, dt, frac, gamma, v_t, omega):
    v_flow = 15.0 + 20.0 * omega
    d_xmax = max_position_disruption(v0, dt, 0.0, LIM)
    x = v0 * dt - frac * d_xmax
    D = vehicle_disruption(x, v_t, dt, 0.0, v0, 0.0, v_flow, DisruptionParams(gamma=gamma), LIM)
    assert -1e-12 <= D <= 1.0 + 1e-9


# total


def test_total_examples():
    assert total_disruption(0.0, 0.0, 0.0, DisruptionParams()) == 0.0
    assert total_disruption(0.1, 0.7, 0.2, DisruptionParams()) == pytest.approx(0.15, abs=1e-12)
    thirds = DisruptionParams(zeta_C=1 / 3, zeta_i=1 / 3, zeta_i1=1 / 3)
    assert total_disruption(0.3, 0.0, 0.3, thirds) == pytest.approx(0.2, abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_total_symmetric_under_equal_weights(a, b, c):
    thirds = DisruptionParams(zeta_C=1 / 3, zeta_i=1 / 3, zeta_i1=1 / 3)
    assert total_disruption(a, b, c, thirds) == pytest.approx(total_disruption(c, a, b, thirds), abs=1e-12)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_total_linear(a, b, c, s):
    p = DisruptionParams()
    assert total_disruption(s * a, s * b, s * c, p) == pytest.approx(s * total_disruption(a, b, c, p), abs=1e-12)


def test_params_invariants():
    with pytest.raises(ContractError):
        DisruptionParams(gamma=1.2)
    with pytest.raises(ContractError):
        DisruptionParams(zeta_C=0.5, zeta_i=0.5, zeta_i1=0.5)
