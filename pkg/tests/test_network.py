import numpy as np
import pytest

import pfsc
from pfsc.errors import (
    DegenerateBranchError,
    NetworkParseError,
    NetworkValidationError,
)
from pfsc.network import Branch, Bus, NetworkModel, emit_network, load_network

from conftest import make_random_network


class TestBuildAdmittance:
    def test_single_branch_analytic_form(self, two_bus):
        Y = pfsc.build_admittance(two_bus)
        expected = np.array([[-10j, 10j], [10j, -10j]])
        np.testing.assert_allclose(Y.matrix, expected, atol=1e-12)

    def test_ieee4_spot_value(self, ieee4):
        # off-diagonal element equals -1/z_line12 in per-unit
        Y = pfsc.build_admittance(ieee4)
        br12 = ieee4.branches[0]
        z_pu = br12.z_ohm[0, 0] / ieee4.z_base_ohm
        assert Y.matrix.shape == (4, 4)
        np.testing.assert_allclose(Y.element(1, 2), -1.0 / z_pu, rtol=1e-12)

    def test_degenerate_branch(self):
        with pytest.raises(DegenerateBranchError, match="degenerate branch"):
            net = NetworkModel(
                buses=(Bus(1, "slack"), Bus(2, "pq", (0.0,), (0.0,))),
                branches=(Branch(1, 2, 0.0),),
                phase_count=1,
                slack_bus=1,
                base_power_va=1e6,
                base_voltage_v=1e3,
            )
            pfsc.build_admittance(net)

    def test_disconnected_graph(self):
        with pytest.raises(NetworkValidationError, match="graph not connected"):
            NetworkModel(
                buses=(
                    Bus(1, "slack"),
                    Bus(2, "pq", (0.0,), (0.0,)),
                    Bus(3, "pq", (0.0,), (0.0,)),
                ),
                branches=(Branch(1, 2, 0.1j),),
                phase_count=1,
                slack_bus=1,
                base_power_va=1e6,
                base_voltage_v=1e3,
            )

    def test_row_sums_zero_without_shunts(self, ieee4):
        Y = pfsc.build_admittance(ieee4)
        scale = np.linalg.norm(Y.matrix)
        assert np.max(np.abs(Y.matrix.sum(axis=1))) < 1e-14 * scale

    def test_permutation_equivariance(self):
        net = make_random_network(5, seed=7)
        Y = pfsc.build_admittance(net)
        # reverse the bus list; branches unchanged (they refer to indices)
        swapped = NetworkModel(
            buses=tuple(reversed(net.buses)),
            branches=net.branches,
            phase_count=1,
            slack_bus=net.slack_bus,
            base_power_va=net.base_power_va,
            base_voltage_v=net.base_voltage_v,
        )
        Y2 = pfsc.build_admittance(swapped)
        perm = [swapped.bus_position(b.index) for b in net.buses]
        np.testing.assert_allclose(
            Y2.matrix[np.ix_(perm, perm)], Y.matrix, rtol=1e-15
        )


class TestLoadNetwork:
    def test_bundled_ieee4(self, ieee4):
        assert ieee4.n_bus == 4
        assert ieee4.phase_count == 1
        assert ieee4.slack_bus == 1
        by_index = {b.index: b for b in ieee4.buses}
        # net injections: PV generation minus the 300 kW / 150 kVar demand
        assert by_index[2].p_kw == (480.0 - 300.0,)
        assert by_index[3].p_kw == (600.0 - 300.0,)
        assert by_index[4].p_kw == (-300.0,)
        for i in (2, 3, 4):
            assert by_index[i].q_kvar == (-150.0,)

    def test_two_slack_buses(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(
            """
phases: 1
bases: {s_base_va: 1.0e6, v_base_v: 1000.0}
buses:
  - {index: 1, kind: slack}
  - {index: 2, kind: slack}
branches:
  - {from: 1, to: 2, r_ohm: 0.0, x_ohm: 0.1}
"""
        )
        with pytest.raises(NetworkValidationError, match="exactly one slack"):
            load_network(path)

    def test_dimension_error(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(
            """
phases: 3
bases: {s_base_va: 1.0e6, v_base_v: 1000.0}
buses:
  - {index: 1, kind: slack}
  - {index: 2, kind: pq, p_kw: [0, 0, 0], q_kvar: [0, 0, 0]}
branches:
  - {from: 1, to: 2, r_ohm: [[0.1, 0.0], [0.0, 0.1]], x_ohm: [[0.1, 0.0], [0.0, 0.1]]}
"""
        )
        with pytest.raises(NetworkParseError, match="impedance block"):
            load_network(path)

    def test_missing_section(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("phases: 1\n")
        with pytest.raises(NetworkParseError, match="missing section"):
            load_network(path)

    def test_round_trip(self, ieee4, tmp_path):
        out = tmp_path / "rt.yaml"
        emit_network(ieee4, out)
        again = load_network(out)
        assert again.buses == ieee4.buses
        assert again.branches == ieee4.branches
        assert again.phase_count == ieee4.phase_count
        assert again.slack_bus == ieee4.slack_bus
        assert again.base_power_va == ieee4.base_power_va
        assert again.base_voltage_v == ieee4.base_voltage_v
        assert again.slack_voltage_pu == ieee4.slack_voltage_pu

    def test_per_unit_conversion(self, ieee4):
        s = ieee4.injections_pu()
        i4 = ieee4.flat_index(4)
        assert s[i4] == pytest.approx((-300e3 - 150e3j) / 1e7)
