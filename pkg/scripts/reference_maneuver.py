"""Sample maneuver of the lane-changing vehicle: analytic solve, relaxed solve and oracle cross-check."""

import time

from coop_lane.instances import (
    REF_C,
    REF_LIMITS,
    REF_RELAXED_TF,
    REF_RELAXED_V,
    REF_TF,
    REF_U,
    REF_V,
    REF_V_FLOW,
    REF_WEIGHTS,
)
from coop_lane.numerics import transcription_oracle
from coop_lane.ocp_longitudinal import TrackingWeights, solve_cav_c, solve_cav_c_relaxed
from coop_lane.oracle_specs import cav_c_spec


def main():
    t = time.perf_counter()
    sol = solve_cav_c(REF_C, REF_U, REF_V_FLOW, REF_WEIGHTS, REF_LIMITS)
    dt = time.perf_counter() - t
    print(f"free tf:    tf = {sol.tf:.4f} s (reference {REF_TF}), v(tf) = {sol.terminal_v:.4f} m/s "
          f"(reference {REF_V}), case {sol.case_label.value}, J = {sol.objective_value:.4f}, "
          f"{1e3 * dt:.1f} ms")

    spec = cav_c_spec(REF_C, REF_U, REF_V_FLOW, REF_WEIGHTS.alpha_t, REF_WEIGHTS.alpha_v,
                      REF_LIMITS, 15.0)
    orc = transcription_oracle(spec)
    print(f"oracle:     tf = {orc.tf:.4f} s, v(tf) = {orc.v[-1]:.4f} m/s, J = {orc.objective:.4f}")

    tw = TrackingWeights.from_limits(0.5, REF_LIMITS)
    rel = solve_cav_c_relaxed(REF_C, REF_U, REF_V_FLOW, REF_RELAXED_TF, tw, REF_LIMITS)
    print(f"relaxed tf: tf = {rel.tf:.4f} s, v(tf) = {rel.terminal_v:.4f} m/s (reference {REF_RELAXED_V}), "
          f"case {rel.case_label.value}")


if __name__ == "__main__":
    main()
