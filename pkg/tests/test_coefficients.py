import numpy as np
import pytest

import pfsc
from pfsc.coefficients import (
    assemble_problem,
    finite_difference_oracle,
    solve_coefficients,
)
from pfsc.errors import SingularSystemError

from conftest import make_random_network, make_three_phase_balanced, make_two_bus


def solved(network):
    Y = pfsc.build_admittance(network)
    state = pfsc.solve_load_flow(network, Y)
    problem = assemble_problem(Y, state, network)
    return Y, state, problem, solve_coefficients(problem, voltages=state.voltages)


class TestAssemble:
    def test_two_bus_flat_hand_system(self, two_bus):
        # at the flat no-load point: K_2 = 0, A = conj(E2) Y22 = -10j,
        # so H = [[0, 10], [-10, 0]]
        Y, state, problem, _ = solved(two_bus)
        np.testing.assert_allclose(
            problem.H, np.array([[0.0, 10.0], [-10.0, 0.0]]), atol=1e-9
        )

    def test_z_column_structure(self, ieee4_solved):
        net, Y, state = ieee4_solved
        problem = assemble_problem(Y, state, net)
        for bus in (2, 3, 4):
            col = problem.z[:, problem.column(bus, wrt="P")]
            assert np.count_nonzero(col) == 1
            assert col[problem.row(bus, part="re")] == 1.0
            qcol = problem.z[:, problem.column(bus, wrt="Q")]
            assert np.count_nonzero(qcol) == 1
            assert qcol[problem.row(bus, part="im")] == -1.0
        assert set(np.unique(problem.z)) <= {-1.0, 0.0, 1.0}

    def test_unconverged_state_rejected(self, ieee4_solved):
        from dataclasses import replace

        net, Y, state = ieee4_solved
        bad = replace(state, converged=False)
        with pytest.raises(ValueError, match="not converged"):
            assemble_problem(Y, bad, net)

    def test_ieee4_H_well_conditioned(self, ieee4_solved):
        net, Y, state = ieee4_solved
        problem = assemble_problem(Y, state, net)
        assert np.isfinite(np.linalg.cond(problem.H))
        assert problem.H.shape == (6, 6)


class TestSolve:
    def test_two_bus_flat_hand_solution(self, two_bus):
        # lossless flat case: dE2/dP2 = jx, dE2/dQ2 = x
        _, _, _, res = solved(two_bus)
        assert res.derivative(2, 2, wrt="P") == pytest.approx(0.1j, abs=1e-12)
        assert res.derivative(2, 2, wrt="Q") == pytest.approx(0.1, abs=1e-12)

    def test_two_bus_with_resistance(self):
        # u solves conj(E2) y u = 1 at flat start, so dE2/dP2 = z = r + jx
        net = make_two_bus(x_pu=0.1, r_pu=0.03)
        _, _, _, res = solved(net)
        assert res.derivative(2, 2, wrt="P") == pytest.approx(
            0.03 + 0.1j, abs=1e-12
        )
        assert res.derivative(2, 2, wrt="Q") == pytest.approx(
            0.1 - 0.03j, abs=1e-12
        )

    def test_residual_bound(self, ieee4_solved):
        net, Y, state = ieee4_solved
        problem = assemble_problem(Y, state, net)
        res = solve_coefficients(problem)
        residual = np.max(np.abs(problem.H @ res.x - problem.z))
        assert residual <= 1e-10 * np.max(np.abs(problem.z))

    def test_slack_not_present(self, ieee4_solved):
        net, Y, state = ieee4_solved
        problem = assemble_problem(Y, state, net)
        res = solve_coefficients(problem)
        assert res.x.shape == (6, 6)
        with pytest.raises(ValueError):
            res.derivative(1, 2)  # slack bus excluded by construction

    def test_singular_H_raises(self, ieee4_solved):
        from dataclasses import replace

        net, Y, state = ieee4_solved
        problem = assemble_problem(Y, state, net)
        singular = replace(problem, H=np.zeros_like(problem.H))
        with pytest.raises(SingularSystemError, match="not invertible"):
            solve_coefficients(singular)

    def test_deterministic_bitwise(self, ieee4_solved):
        net, Y, state = ieee4_solved
        problem = assemble_problem(Y, state, net)
        a = solve_coefficients(problem)
        b = solve_coefficients(problem)
        assert np.array_equal(a.x, b.x)

    def test_three_phase_balanced_symmetry(self):
        # diagonal coefficients agree across phases once the 120-degree
        # slack rotation is divided out
        net = make_three_phase_balanced()
        _, _, _, res = solved(net)
        rot = net.slack_voltage_phasors()
        for bus_i in (2, 3, 4):
            base = res.derivative(bus_i, bus_i, 0, 0)
            for ph in (1, 2):
                d = res.derivative(bus_i, bus_i, ph, ph) / rot[ph]
                assert abs(d - base) / abs(base) < 1e-9


class TestFiniteDifferenceOracle:
    def test_zero_step_rejected(self, ieee4_solved):
        net, Y, _ = ieee4_solved
        with pytest.raises(ValueError, match="degenerate step"):
            finite_difference_oracle(net, Y, 2, h=0.0)

    @pytest.mark.parametrize("which", ["P", "Q"])
    def test_two_bus_agreement(self, which):
        net = make_two_bus(p2_kw=50.0, q2_kvar=-20.0, x_pu=0.1, r_pu=0.03)
        Y, state, problem, res = solved(net)
        fd = finite_difference_oracle(net, Y, 2, which=which, h=1e-5, state=state)
        an = res.derivative(2, 2, wrt=which)
        assert abs(an - fd[net.flat_index(2)]) < 1e-6

    def test_ieee4_agreement_all_coefficients(self, ieee4_solved):
        net, Y, state = ieee4_solved
        problem = assemble_problem(Y, state, net)
        res = solve_coefficients(problem)
        for bus_l in (2, 3, 4):
            for which in ("P", "Q"):
                fd = finite_difference_oracle(
                    net, Y, bus_l, which=which, h=1e-5, state=state
                )
                for bus_i in (2, 3, 4):
                    an = res.derivative(bus_i, bus_l, wrt=which)
                    ref = fd[net.flat_index(bus_i)]
                    assert abs(an - ref) / max(abs(ref), 1e-9) <= 1e-3

    def test_random_networks_agreement(self):
        for seed in (0, 1, 2):
            net = make_random_network(5, seed=seed)
            Y, state, problem, res = solved(net)
            for bus_l in (2, 3):
                fd = finite_difference_oracle(
                    net, Y, bus_l, which="P", h=1e-5, state=state
                )
                for bus_i in range(2, net.n_bus + 1):
                    an = res.derivative(bus_i, bus_l, wrt="P")
                    ref = fd[net.flat_index(bus_i)]
                    assert abs(an - ref) / max(abs(ref), 1e-9) <= 1e-3


def test_magnitude_sensitivity(ieee4_solved):
    net, Y, state = ieee4_solved
    problem = assemble_problem(Y, state, net)
    res = solve_coefficients(problem, voltages=state.voltages)
    # compare against a central difference of |E|
    h = 1e-5
    fd = finite_difference_oracle(net, Y, 3, which="P", h=h, state=state)
    # |E + h dE| - |E - h dE| over 2h equals the magnitude derivative to O(h^2)
    i4 = net.flat_index(4)
    e = state.voltages[i4]
    num = (abs(e + h * fd[i4]) - abs(e - h * fd[i4])) / (2 * h)
    assert res.magnitude_derivative(4, 3, wrt="P") == pytest.approx(num, rel=1e-5)
