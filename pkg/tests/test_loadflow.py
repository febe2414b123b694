import numpy as np
import pytest
from scipy import optimize

import pfsc
from pfsc.errors import LoadFlowError
from pfsc.loadflow import nodal_power, solve_load_flow

from conftest import make_two_bus


def test_nodal_power_flat_lossless(two_bus):
    Y = pfsc.build_admittance(two_bus)
    s = nodal_power(np.array([1.0 + 0j, 1.0 + 0j]), Y)
    np.testing.assert_allclose(s, 0.0, atol=1e-15)


def test_nodal_power_hand_value(two_bus):
    # S_2 = 0.95 * conj(10j*1 - 10j*0.95) = -0.475j
    Y = pfsc.build_admittance(two_bus)
    s = nodal_power(np.array([1.0 + 0j, 0.95 + 0j]), Y)
    assert s[1] == pytest.approx(-0.475j, abs=1e-15)


def test_nodal_power_dimension_mismatch(two_bus):
    Y = pfsc.build_admittance(two_bus)
    with pytest.raises(ValueError, match="dimension mismatch"):
        nodal_power(np.ones(3, dtype=complex), Y)


def test_zero_injection_flat_solution():
    net = make_two_bus(p2_kw=0.0, q2_kvar=0.0)
    Y = pfsc.build_admittance(net)
    state = solve_load_flow(net, Y)
    np.testing.assert_allclose(state.voltages, 1.0 + 0j, atol=1e-12)


def test_ieee4_voltage_profile(ieee4_solved):
    net, Y, state = ieee4_solved
    mags = np.abs(state.voltages)
    assert np.all((mags > 0.9) & (mags < 1.05))


def test_monotone_drop_under_net_load(ieee4):
    # strip the PV units: every non-slack bus becomes a pure load
    from dataclasses import replace

    from pfsc.network import Bus

    buses = tuple(
        b if b.kind == "slack" else Bus(b.index, "pq", (-300.0,), (-150.0,))
        for b in ieee4.buses
    )
    loaded = replace(ieee4, buses=buses)
    Y = pfsc.build_admittance(loaded)
    state = solve_load_flow(loaded, Y)
    mags = np.abs(state.voltages)
    assert np.all(np.diff(mags) < 0.0)


def test_fixed_point(ieee4_solved):
    net, Y, state = ieee4_solved
    s = nodal_power(state.voltages, Y)
    spec = net.injections_pu()
    pq = [i for i in range(net.n_nodes) if i not in net.slack_flat_indices()]
    assert np.max(np.abs(s[pq] - spec[pq])) <= 1e-8


def test_slack_voltage_untouched(ieee4_solved):
    net, Y, state = ieee4_solved
    assert state.voltages[net.flat_index(1)] == net.slack_voltage_pu


def test_cross_check_with_independent_solver(ieee4_solved):
    # generic root finder on the power mismatch, no Newton machinery shared
    net, Y, state = ieee4_solved
    Ym = Y.matrix
    spec = net.injections_pu()
    slack = net.slack_flat_indices()
    pq = [i for i in range(net.n_nodes) if i not in slack]

    def residual(v):
        E = np.empty(net.n_nodes, dtype=complex)
        E[slack] = net.slack_voltage_pu
        E[pq] = v[: len(pq)] + 1j * v[len(pq) :]
        mis = spec - E * np.conj(Ym @ E)
        return np.concatenate([mis[pq].real, mis[pq].imag])

    v0 = np.concatenate([np.ones(len(pq)), np.zeros(len(pq))])
    sol = optimize.fsolve(residual, v0, full_output=False, xtol=1e-12)
    E_ref = sol[: len(pq)] + 1j * sol[len(pq) :]
    np.testing.assert_allclose(state.voltages[pq], E_ref, atol=1e-9)


def test_absurd_load_does_not_converge():
    net = make_two_bus(p2_kw=-1e3 * 1e3)  # 1e3 pu on the 1 MVA base
    Y = pfsc.build_admittance(net)
    with pytest.raises(LoadFlowError) as excinfo:
        solve_load_flow(net, Y)
    assert excinfo.value.mismatch is not None


def test_deterministic(ieee4):
    Y = pfsc.build_admittance(ieee4)
    a = solve_load_flow(ieee4, Y)
    b = solve_load_flow(ieee4, Y)
    assert np.array_equal(a.voltages, b.voltages)
