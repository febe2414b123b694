"""Analytical uncertainty propagation for the sensitivity coefficients.

Chain: polar measurement noise -> Cartesian voltage stds -> per-entry
variances of H -> per-entry variances of H^-1 -> per-coefficient stds.

Variances (not stds) are the internal currency; stds appear only at the
reporting boundary.  All cross-covariances between distinct admittance
elements, between admittance and voltage, and between distinct voltage
entries are taken as zero (inputs are perturbed independently); repeated
occurrences of the *same* input variable inside one H entry are combined
before squaring, so entries on the diagonal are handled exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .coefficients import SensitivityProblem
from .errors import ConfigError
from .loadflow import GridState
from .network import AdmittanceMatrix

#: Imaginary-part projection variants, see project_polar_noise.
FORM_SIGN_CORRECTED = "sign-corrected"
FORM_REPEATED_SIGN = "repeated-sign"


# -- noise specifications ----------------------------------------------------


@dataclass(frozen=True)
class PolarNoiseSpec:
    """Per-node noise stds in polar coordinates.

    ``sigma_rho`` is the magnitude std; with ``relative=True`` (the
    default, matching instrument-transformer class semantics) it is a
    fraction of the nominal magnitude.  ``sigma_theta`` is the phase std
    in radians.  Scalars broadcast over all nodes.
    """

    sigma_rho: float = 0.0
    sigma_theta: float = 0.0
    relative: bool = True

    def __post_init__(self):
        if self.sigma_rho < 0 or self.sigma_theta < 0:
            raise ConfigError("polar noise stds must be nonnegative")


@dataclass(frozen=True)
class CartesianNoiseSpec:
    """Per-node stds of the real and imaginary voltage parts (per-unit)."""

    sigma_re: np.ndarray
    sigma_im: np.ndarray

    @classmethod
    def zero(cls, n_nodes):
        return cls(np.zeros(n_nodes), np.zeros(n_nodes))

    def variances(self):
        return self.sigma_re**2, self.sigma_im**2


@dataclass(frozen=True)
class AdmittanceUncertainty:
    """Per-element stds of Re(Y) and Im(Y), same shape as Y."""

    sigma_re: np.ndarray
    sigma_im: np.ndarray
    level_pct: float | None = None  # set when built via from_relative

    def __post_init__(self):
        if np.any(self.sigma_re < 0) or np.any(self.sigma_im < 0):
            raise ConfigError("admittance stds must be nonnegative")

    @classmethod
    def from_relative(cls, Y: AdmittanceMatrix | np.ndarray, level_pct: float):
        """Both stds set to ``level_pct`` percent of |element|.

        Structurally zero elements keep zero std.
        """
        Ym = Y.matrix if isinstance(Y, AdmittanceMatrix) else np.asarray(Y)
        sigma = np.abs(Ym) * (level_pct / 100.0)
        return cls(sigma_re=sigma, sigma_im=sigma.copy(), level_pct=level_pct)

    @classmethod
    def zero(cls, n_nodes):
        z = np.zeros((n_nodes, n_nodes))
        return cls(z, z.copy(), level_pct=0.0)


@dataclass(frozen=True)
class HVariance:
    """Per-entry variance of H."""

    var: np.ndarray


@dataclass(frozen=True)
class InverseVariance:
    """Per-entry (self) variance of H^-1; cross terms computed on demand.

    The full cross-covariance object would be (2n)^2 x (2n)^2 and is never
    materialized.
    """

    var: np.ndarray
    H_inv: np.ndarray = field(repr=False, default=None)
    h_var: np.ndarray = field(repr=False, default=None)

    def cross_covariance(self, mn, ab):
        return inverse_cross_covariance(self.H_inv, HVariance(self.h_var), mn, ab)


@dataclass(frozen=True)
class UncertaintyResult:
    """Per-coefficient stds, aligned with the x matrix of the solve."""

    sigma: np.ndarray
    method: str  # "analytical" | "monte-carlo"
    metadata: dict = field(default_factory=dict)
    problem: SensitivityProblem | None = field(repr=False, default=None)

    def coefficient_sigma(self, bus_i, bus_l, phase_i=0, phase_l=0,
                          part="re", wrt="P"):
        if self.problem is None:
            raise ValueError("no index map attached")
        row = self.problem.row(bus_i, phase_i, part)
        col = self.problem.column(bus_l, phase_l, wrt)
        return float(self.sigma[row, col])


# -- IT class table ----------------------------------------------------------


def load_noise_config(path):
    """Read a noise configuration file.

    Expected keys: ``it_classes`` mapping class labels to
    ``{magnitude_pct, phase_rad}`` worst-case limits, and optionally
    ``admittance_sigma_pct``.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or "it_classes" not in raw:
        raise ConfigError(f"{path}: missing it_classes table")
    return raw


def default_noise_config():
    with resources.files("pfsc.data").joinpath("noise_classes.yaml").open() as fh:
        return yaml.safe_load(fh)


def it_class_to_polar(class_label, config=None, magnitude_pct=None,
                      phase_rad=None) -> PolarNoiseSpec:
    """Polar stds from an instrument-transformer accuracy class.

    The class worst-case limits (magnitude in percent, phase in radians)
    are read from ``config`` and interpreted as 3-sigma bounds, so the
    returned stds are limit/3.  ``class_label`` "custom" takes the limits
    from the keyword arguments instead.
    """
    if str(class_label) == "custom":
        if magnitude_pct is None or phase_rad is None:
            raise ConfigError("custom IT class needs magnitude_pct and phase_rad")
        return PolarNoiseSpec(
            sigma_rho=magnitude_pct / 100.0 / 3.0,
            sigma_theta=phase_rad / 3.0,
        )
    if config is None:
        config = default_noise_config()
    classes = config.get("it_classes", config)
    entry = classes.get(str(class_label))
    if entry is None:
        known = ", ".join(sorted(classes))
        raise ConfigError(f"unknown IT class {class_label!r} (known: {known})")
    return PolarNoiseSpec(
        sigma_rho=float(entry["magnitude_pct"]) / 100.0 / 3.0,
        sigma_theta=float(entry["phase_rad"]) / 3.0,
    )


# -- polar -> Cartesian projection ------------------------------------------


def project_polar_noise(
    state: GridState | np.ndarray,
    polar: PolarNoiseSpec,
    form: str = FORM_SIGN_CORRECTED,
) -> CartesianNoiseSpec:
    """Closed-form stds of Re(E) and Im(E) from polar noise stds.

    Two variants of the imaginary-part expression are provided.  The
    ``sign-corrected`` default flips the sign of the cos(2*theta) term in
    the imaginary-part variance relative to the ``repeated-sign`` form;
    the sampling oracle in the test suite confirms that only the corrected
    form reproduces empirical stds (the literal form reuses the real-part
    cos(2*theta) sign and is off by orders of magnitude away from
    theta = pi/2).  See docs/projection-validation in the README.
    """
    E = state.voltages if isinstance(state, GridState) else np.asarray(state)
    rho = np.abs(E)
    theta = np.angle(E)
    if polar.sigma_rho == 0.0 and polar.sigma_theta == 0.0:
        return CartesianNoiseSpec.zero(E.size)

    sa = polar.sigma_rho if polar.relative else polar.sigma_rho / rho
    sb = polar.sigma_theta
    damp2 = np.exp(-2.0 * sb**2)
    damp_half = np.exp(-0.5 * sb**2)
    common = 0.5 * (1.0 + sa**2) * rho**2
    tail = 1.0 - 2.0 * damp_half

    var_re = common * (1.0 + damp2 * np.cos(2 * theta)) + rho**2 * np.cos(theta) ** 2 * tail
    if form == FORM_REPEATED_SIGN:
        var_im = (
            common * (1.0 + damp2 * np.cos(2 * theta))
            + rho**2 * np.sin(theta) ** 2 * tail
        )
    elif form == FORM_SIGN_CORRECTED:
        var_im = (
            common * (1.0 - damp2 * np.cos(2 * theta))
            + rho**2 * np.sin(theta) ** 2 * tail
        )
    else:
        raise ConfigError(f"unknown projection form {form!r}")
    # cancellation can leave tiny negative residue at very small noise
    var_re = np.maximum(var_re, 0.0)
    var_im = np.maximum(var_im, 0.0)
    return CartesianNoiseSpec(sigma_re=np.sqrt(var_re), sigma_im=np.sqrt(var_im))


# -- variance of H -----------------------------------------------------------


def propagate_to_H(
    problem: SensitivityProblem,
    Y: AdmittanceMatrix,
    state: GridState,
    yu: AdmittanceUncertainty,
    en: CartesianNoiseSpec,
    second_order: bool = False,
) -> HVariance:
    """Per-entry variance of H via sum/product error-propagation rules.

    Every H entry is a sum of bilinear products of one voltage part and
    one admittance part; the variance of each entry is the quadratic form
    sum_v (dH/dv)^2 var(v) over the independent inputs v.  With
    ``second_order=True`` the +var(a)var(b) product-rule term is included
    for every bilinear pairing (default off; the first-order form is the
    operating regime of the propagation).
    """
    Ym = Y.matrix if isinstance(Y, AdmittanceMatrix) else np.asarray(Y)
    E = state.voltages if isinstance(state, GridState) else np.asarray(state)
    ns = list(problem.nonslack)
    n = len(ns)
    m = E.size

    er, ei = E.real, E.imag
    yr, yi = Ym.real, Ym.imag
    vEr, vEi = en.sigma_re**2, en.sigma_im**2
    vYr, vYi = yu.sigma_re**2, yu.sigma_im**2
    if vEr.shape != (m,) or vYr.shape != (m, m):
        raise ValueError("noise spec dimensions do not match the network")

    var = np.empty((2 * n, 2 * n))

    # Off-diagonal node pairs (r != c): only the A-term
    # A_rc = conj(E_r) Y_rc contributes.
    #   Re(A) = er_r yr_rc + ei_r yi_rc ; Im(A) = er_r yi_rc - ei_r yr_rc
    er_r = er[ns][:, None]
    ei_r = ei[ns][:, None]
    yr_b = yr[np.ix_(ns, ns)]
    yi_b = yi[np.ix_(ns, ns)]
    vYr_b = vYr[np.ix_(ns, ns)]
    vYi_b = vYi[np.ix_(ns, ns)]
    vEr_r = vEr[ns][:, None]
    vEi_r = vEi[ns][:, None]

    v_reA = er_r**2 * vYr_b + ei_r**2 * vYi_b + yr_b**2 * vEr_r + yi_b**2 * vEi_r
    v_imA = er_r**2 * vYi_b + ei_r**2 * vYr_b + yi_b**2 * vEr_r + yr_b**2 * vEi_r
    if second_order:
        v_reA = v_reA + vEr_r * vYr_b + vEi_r * vYi_b
        v_imA = v_imA + vEr_r * vYi_b + vEi_r * vYr_b

    var[0::2, 0::2] = v_reA
    var[0::2, 1::2] = v_imA
    var[1::2, 0::2] = v_imA
    var[1::2, 1::2] = v_reA

    # Diagonal node pairs (r == c): the K-term K_r = sum_n Y_rn E_n shares
    # inputs with A_rr, so gradients are combined before squaring.
    #
    # Per entry we track, over the full node set n, the bilinear pair
    # coefficients c of the four product channels
    #   (Re E_n, Re Y_rn), (Im E_n, Im Y_rn),
    #   (Re E_n, Im Y_rn), (Im E_n, Re Y_rn)
    # with:  Re(A_rr): (+1, +1, 0, 0) at n = r only
    #        Im(A_rr): (0, 0, +1, -1) at n = r only
    #        Re(K_r):  (+1, -1, 0, 0) at every n
    #        Im(K_r):  (0, 0, +1, +1) at every n
    for k, fr in enumerate(ns):
        onehot = np.zeros(m)
        onehot[fr] = 1.0
        # (c_rr, c_ii, c_ri, c_ir) coefficient arrays per named part
        parts = {
            "ReA": (onehot, onehot, 0.0, 0.0),
            "ImA": (0.0, 0.0, onehot, -onehot),
            "ReK": (np.ones(m), -np.ones(m), 0.0, 0.0),
            "ImK": (0.0, 0.0, np.ones(m), np.ones(m)),
        }
        entries = {
            (0, 0): (("ReA", +1.0), ("ReK", +1.0)),
            (0, 1): (("ImA", -1.0), ("ImK", +1.0)),
            (1, 0): (("ImA", +1.0), ("ImK", +1.0)),
            (1, 1): (("ReA", +1.0), ("ReK", -1.0)),
        }
        for (dr, dc), terms in entries.items():
            c = [np.zeros(m) for _ in range(4)]
            for name, sign in terms:
                for ch in range(4):
                    c[ch] = c[ch] + sign * np.asarray(parts[name][ch])
            c_rr, c_ii, c_ri, c_ir = c
            # first-order gradients follow from the pair coefficients:
            # dH/dYre_rn = c_rr*er_n + c_ir*ei_n, etc.
            g_yr = c_rr * er + c_ir * ei
            g_yi = c_ii * ei + c_ri * er
            g_er = c_rr * yr[fr] + c_ri * yi[fr]
            g_ei = c_ii * yi[fr] + c_ir * yr[fr]
            v = (
                g_yr**2 @ vYr[fr]
                + g_yi**2 @ vYi[fr]
                + g_er**2 @ vEr
                + g_ei**2 @ vEi
            )
            if second_order:
                v += (
                    c_rr**2 * vEr * vYr[fr]
                    + c_ii**2 * vEi * vYi[fr]
                    + c_ri**2 * vEr * vYi[fr]
                    + c_ir**2 * vEi * vYr[fr]
                ).sum()
            var[2 * k + dr, 2 * k + dc] = v
    return HVariance(var=var)


# -- variance of H^-1 --------------------------------------------------------


def inverse_self_variance(H_inv: np.ndarray, hv: HVariance) -> InverseVariance:
    """Per-entry variance of H^-1: (H^-1 o H^-1) varH (H^-1 o H^-1).

    ``o`` is the entrywise square; algebraically identical to the
    quadruple-loop reference implementation.
    """
    sq = H_inv**2
    if sq.shape != hv.var.shape:
        raise ValueError("shape mismatch between H^-1 and its variance")
    var = sq @ hv.var @ sq
    return InverseVariance(var=var, H_inv=H_inv, h_var=hv.var)


def inverse_self_variance_reference(H_inv: np.ndarray, hv: HVariance) -> np.ndarray:
    """O(n^4) literal double sum, kept as the cross-check implementation."""
    n = H_inv.shape[0]
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            acc = 0.0
            for i in range(n):
                for j in range(n):
                    acc += H_inv[a, i] ** 2 * hv.var[i, j] * H_inv[j, b] ** 2
            out[a, b] = acc
    return out


def inverse_cross_covariance(H_inv: np.ndarray, hv: HVariance, mn, ab) -> float:
    """cov(H^-1[m,n], H^-1[a,b]) induced by independent entry noise on H."""
    m_, n_ = mn
    a_, b_ = ab
    dim = H_inv.shape[0]
    for idx in (m_, n_, a_, b_):
        if not 0 <= idx < dim:
            raise IndexError(f"index {idx} out of range for {dim}x{dim} matrix")
    left = H_inv[m_, :] * H_inv[a_, :]
    right = H_inv[:, n_] * H_inv[:, b_]
    return float(left @ hv.var @ right)


# -- coefficient variance ----------------------------------------------------


def coefficient_variance(
    H_inv: np.ndarray,
    iv: InverseVariance,
    z: np.ndarray,
    problem: SensitivityProblem | None = None,
    metadata: dict | None = None,
) -> UncertaintyResult:
    """Coefficient stds for constant z: var(x)_ic = sum_j var(Hinv)_ij z_jc^2."""
    var_x = iv.var @ (z**2)
    # z columns are unit vectors, so each output column is one column of
    # the inverse-variance matrix; cheap internal consistency check.
    nz = np.abs(z) == 1.0
    if np.all(np.sum(nz, axis=0) == 1) and np.all((z == 0) | nz):
        picked = iv.var[:, np.argmax(nz, axis=0)]
        assert np.allclose(var_x, picked), "unit-column reduction violated"
    return UncertaintyResult(
        sigma=np.sqrt(var_x),
        method="analytical",
        metadata=dict(metadata or {}),
        problem=problem,
    )


def general_variance(
    H_inv: np.ndarray,
    iv: InverseVariance,
    z: np.ndarray,
    zv: np.ndarray,
    problem: SensitivityProblem | None = None,
    metadata: dict | None = None,
) -> UncertaintyResult:
    """Full propagation including variance of z.

    With ``zv`` identically zero this reproduces coefficient_variance
    bitwise.
    """
    var_x = H_inv**2 @ np.asarray(zv) + iv.var @ (z**2)
    return UncertaintyResult(
        sigma=np.sqrt(var_x),
        method="analytical",
        metadata=dict(metadata or {}),
        problem=problem,
    )


# -- end-to-end convenience --------------------------------------------------


def analytical_sigma(
    problem, result, Y, state, yu, en, second_order=False, metadata=None
):
    """Run the full analytical chain and return the UncertaintyResult.

    Wall time of the propagation is recorded in the metadata.
    """
    t0 = time.perf_counter()
    hv = propagate_to_H(problem, Y, state, yu, en, second_order=second_order)
    iv = inverse_self_variance(result.H_inv, hv)
    out = coefficient_variance(result.H_inv, iv, problem.z, problem=problem)
    meta = dict(metadata or {})
    meta["runtime_s"] = time.perf_counter() - t0
    return UncertaintyResult(
        sigma=out.sigma, method="analytical", metadata=meta, problem=problem
    )
