"""Smoke test for the stgf extension module."""

import math

import stgf


def main():
    plant = stgf.PlantParams()
    grid = stgf.GridSignals()

    x = stgf.State(0.6, -0.8, 0.0)
    assert abs(x.current_magnitude() - 1.0) < 1e-12
    assert abs(stgf.current_limit(x, plant)) < 1e-12
    p, q = stgf.power_output(stgf.State(), grid, plant)
    assert p == 0.0 and q == 0.0

    eq = stgf.solve_equilibrium(stgf.CostParams(2.5, -0.5))
    assert eq.converged and eq.constraint_active
    print(f"equilibrium P={eq.active_power:.4f} Q={eq.reactive_power:.4f} kkt={eq.kkt_residual:.1e}")

    ctrl = stgf.StgfController(stgf.State(), stgf.CostParams(0.3, 0.1))
    u = ctrl.step(stgf.State(), grid)
    assert math.isfinite(u.v) and math.isfinite(u.omega)
    assert len(ctrl.inputs()) == 10

    cols = stgf.run_scenario("stgf", n_steps=150)
    assert len(cols["t"]) == 150
    print(f"stgf max |I| = {max(cols['i_mag']):.5f}")
    assert max(cols["i_mag"]) <= 1.001

    droop = stgf.run_scenario("droop", n_steps=150)
    print(f"droop max |I| = {max(droop['i_mag']):.5f}")

    try:
        stgf.run_scenario("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown controller accepted")
    print("ok")


if __name__ == "__main__":
    main()
