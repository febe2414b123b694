"""Voltage sensitivity coefficients from the admittance matrix and grid state.

Differentiating the nodal power balance S_i = E_i * conj((Y E)_i) with
respect to an active or reactive injection at a non-slack node yields, for
each equation node i and each unknown derivative u_n = dE_n/dP (or dQ):

    indicator(i == l) * rhs = K_i * conj(u_i) + conj(E_i) * sum_n Y_in u_n

with K_i = (Y E)_i, rhs = 1 for a P-injection and -j for a Q-injection.
Splitting every complex equation and unknown into real and imaginary parts
gives the square real system  H x = z  solved here.

Realified ordering (rows and columns alike): non-slack nodes in bus-major
order, real part at even offset 2k, imaginary part at 2k+1.  Columns of z:
P-injection of node k at 2k, Q-injection at 2k+1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularSystemError
from .loadflow import GridState, solve_load_flow
from .network import AdmittanceMatrix, NetworkModel, with_injections

RESIDUAL_RTOL = 1e-10
P = "P"
Q = "Q"


@dataclass(frozen=True)
class SensitivityProblem:
    """The real linear system H x = z for all voltage sensitivities."""

    H: np.ndarray  # (2n, 2n) with n = p*(N_b - 1)
    z: np.ndarray  # (2n, 2n); columns are unit right-hand sides
    nonslack: tuple[int, ...]  # flat node indices kept, in order
    phase_count: int
    bus_indices: tuple[int, ...]

    def node_of(self, bus_index, phase=0):
        """Position within ``nonslack`` of a (bus, phase) pair."""
        flat = self.bus_indices.index(bus_index) * self.phase_count + phase
        return self.nonslack.index(flat)

    def row(self, bus_index, phase=0, part="re"):
        k = self.node_of(bus_index, phase)
        return 2 * k + (0 if part == "re" else 1)

    def column(self, bus_index, phase=0, wrt=P):
        k = self.node_of(bus_index, phase)
        return 2 * k + (0 if wrt == P else 1)


@dataclass(frozen=True)
class SensitivityResult:
    """Solved coefficients with complex accessors."""

    x: np.ndarray
    H_inv: np.ndarray
    problem: SensitivityProblem
    voltages: np.ndarray = field(repr=False, default=None)

    def derivative(self, bus_i, bus_l, phase_i=0, phase_l=0, wrt=P):
        """dE(bus_i, phase_i)/d{P or Q}(bus_l, phase_l) as a complex number."""
        pr = self.problem
        col = pr.column(bus_l, phase_l, wrt)
        k = pr.node_of(bus_i, phase_i)
        return complex(self.x[2 * k, col] + 1j * self.x[2 * k + 1, col])

    def magnitude_derivative(self, bus_i, bus_l, phase_i=0, phase_l=0, wrt=P):
        """d|E_i|/d{P or Q}_l, from the complex derivative and the voltage."""
        if self.voltages is None:
            raise ValueError("no operating-point voltages attached")
        pr = self.problem
        flat = pr.bus_indices.index(bus_i) * pr.phase_count + phase_i
        e = self.voltages[flat]
        d = self.derivative(bus_i, bus_l, phase_i, phase_l, wrt)
        return (e.real * d.real + e.imag * d.imag) / abs(e)


def assemble_problem(
    Y: AdmittanceMatrix, state: GridState, network: NetworkModel
) -> SensitivityProblem:
    """Build H and z at a converged operating point."""
    if not state.converged:
        raise ValueError("operating point is not converged")
    E = state.voltages
    return assemble_from_raw(Y.matrix, E, network)


def assemble_from_raw(
    Ym: np.ndarray, E: np.ndarray, network: NetworkModel
) -> SensitivityProblem:
    """Assemble H and z directly from an admittance matrix and voltages.

    Used by assemble_problem and, with perturbed inputs, by the
    Monte-Carlo trials.
    """
    m = network.n_nodes
    if Ym.shape != (m, m) or E.shape != (m,):
        raise ValueError(
            f"dimension mismatch: Y {Ym.shape}, E {E.shape}, nodes {m}"
        )
    slack = set(network.slack_flat_indices())
    nonslack = tuple(i for i in range(m) if i not in slack)
    ns = list(nonslack)
    n = len(ns)

    K = Ym @ E  # per-node current-like sum, multiplies conj(u_i)
    A = np.conj(E[ns, None]) * Ym[np.ix_(ns, ns)]  # multiplies u_n
    B = np.diag(K[ns])

    H = np.empty((2 * n, 2 * n))
    H[0::2, 0::2] = A.real + B.real
    H[0::2, 1::2] = -A.imag + B.imag
    H[1::2, 0::2] = A.imag + B.imag
    H[1::2, 1::2] = A.real - B.real

    z = np.zeros((2 * n, 2 * n))
    for k in range(n):
        z[2 * k, 2 * k] = 1.0  # P-injection: rhs = 1
        z[2 * k + 1, 2 * k + 1] = -1.0  # Q-injection: rhs = -j
    return SensitivityProblem(
        H=H,
        z=z,
        nonslack=nonslack,
        phase_count=network.phase_count,
        bus_indices=tuple(b.index for b in network.buses),
    )


def solve_coefficients(
    problem: SensitivityProblem, voltages=None
) -> SensitivityResult:
    """Solve x = H^-1 z, exposing H^-1 explicitly for error propagation."""
    H, z = problem.H, problem.z
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularSystemError(
            f"Jacobian not invertible (condition number {cond:.3e})"
        )
    H_inv = np.linalg.inv(H)
    x = H_inv @ z
    residual = np.max(np.abs(H @ x - z))
    if residual > RESIDUAL_RTOL * np.max(np.abs(z)):
        # one step of iterative refinement keeps the residual bound honest
        x += H_inv @ (z - H @ x)
        residual = np.max(np.abs(H @ x - z))
        if residual > RESIDUAL_RTOL * np.max(np.abs(z)):
            raise SingularSystemError(
                f"solve residual {residual:.3e} exceeds tolerance"
            )
    return SensitivityResult(x=x, H_inv=H_inv, problem=problem, voltages=voltages)


def finite_difference_oracle(
    network: NetworkModel,
    Y: AdmittanceMatrix,
    bus_index,
    phase=0,
    which=P,
    h=1e-5,
    state: GridState | None = None,
):
    """Central-difference voltage derivatives from two full load flows.

    Perturbs the chosen injection by +/- h (per-unit) and returns
    (E(+h) - E(-h)) / 2h for every node/phase.  Independent of the
    linear-system path; used to validate it.
    """
    if h == 0:
        raise ValueError("degenerate step h = 0")
    s0 = network.injections_pu()
    flat = network.flat_index(bus_index, phase)
    delta = h if which == P else 1j * h
    shifted = []
    for sign in (+1, -1):
        s = s0.copy()
        s[flat] += sign * delta
        st = solve_load_flow(with_injections(network, s), Y, initial=state)
        shifted.append(st.voltages)
    return (shifted[0] - shifted[1]) / (2.0 * h)
