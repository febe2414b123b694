"""AC load flow in rectangular complex coordinates.

The solver produces the operating point (nodal voltage phasors) used both
as the linearization point for the sensitivity computation and as the
ground truth for Monte-Carlo noise studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LoadFlowError
from .network import AdmittanceMatrix, NetworkModel

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50


@dataclass(frozen=True)
class GridState:
    """Nodal voltage phasors (per-unit) at an operating point."""

    voltages: np.ndarray  # complex, length p*N_b, bus-major ordering
    converged: bool
    mismatch: np.ndarray  # complex power residual per node/phase
    iterations: int = 0

    @property
    def max_mismatch(self):
        return float(np.max(np.abs(self.mismatch)))


def nodal_power(voltages, Y: AdmittanceMatrix | np.ndarray):
    """Apparent power injected at each node/phase: S_i = E_i * conj((Y E)_i)."""
    Ym = Y.matrix if isinstance(Y, AdmittanceMatrix) else np.asarray(Y)
    E = np.asarray(voltages, dtype=complex)
    if Ym.shape != (E.size, E.size):
        raise ValueError(
            f"dimension mismatch: Y is {Ym.shape}, voltages length {E.size}"
        )
    return E * np.conj(Ym @ E)


def _jacobian(E, Ym, pq):
    """Real Jacobian of [Re S; Im S] w.r.t. [Re E; Im E] at the PQ nodes.

    Rows/columns interleave Re and Im per node: 2k is the real part of
    node pq[k], 2k+1 the imaginary part.
    """
    n = len(pq)
    K = Ym @ E
    # dS_i/dE_n = conj(K_i) * delta_in   (direct term, complex-linear)
    # dS_i/dconj(E_n) = E_i * conj(Y_in) (conjugate-linear term)
    A = np.conj(K[pq, None]) * np.eye(len(E))[pq][:, pq]
    B = E[pq, None] * np.conj(Ym[np.ix_(pq, pq)])
    J = np.empty((2 * n, 2 * n))
    # dS = A dE + B conj(dE); realify with dE = dr + j di
    J[0::2, 0::2] = A.real + B.real
    J[0::2, 1::2] = -A.imag + B.imag
    J[1::2, 0::2] = A.imag + B.imag
    J[1::2, 1::2] = A.real - B.real
    return J


def solve_load_flow(
    network: NetworkModel,
    Y: AdmittanceMatrix,
    initial: GridState | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> GridState:
    """Newton-Raphson load flow with PQ buses and one slack bus.

    Raises LoadFlowError on non-convergence (carrying the last mismatch)
    or on a singular Jacobian.
    """
    Ym = Y.matrix
    m = network.n_nodes
    slack = network.slack_flat_indices()
    pq = [i for i in range(m) if i not in slack]
    s_spec = network.injections_pu()

    phasors = network.slack_voltage_phasors()
    E = np.tile(phasors, network.n_bus)  # flat start, phase-rotated per bus
    if initial is not None:
        E = initial.voltages.astype(complex).copy()
    E[slack] = phasors

    mismatch = s_spec - nodal_power(E, Ym)
    mismatch[slack] = 0.0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(mismatch)) <= tol:
            return GridState(
                voltages=E, converged=True, mismatch=mismatch, iterations=it - 1
            )
        J = _jacobian(E, Ym, pq)
        rhs = np.empty(2 * len(pq))
        rhs[0::2] = mismatch[pq].real
        rhs[1::2] = mismatch[pq].imag
        try:
            step = np.linalg.solve(J, rhs)
        except np.linalg.LinAlgError as exc:
            raise LoadFlowError(
                f"singular load-flow Jacobian at iteration {it}", mismatch=mismatch
            ) from exc
        E[pq] += step[0::2] + 1j * step[1::2]
        mismatch = s_spec - nodal_power(E, Ym)
        mismatch[slack] = 0.0

    raise LoadFlowError(
        f"load flow did not converge in {max_iter} iterations "
        f"(last max mismatch {np.max(np.abs(mismatch)):.3e} pu)",
        mismatch=mismatch,
    )
