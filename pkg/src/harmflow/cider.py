"""Harmonic-domain models of converter-interfaced resources.

A grid-following converter is split into power hardware (LCL filter plus an
averaged DC link) and control software (cascaded PI loops in rotating DQ
coordinates).  Both are linear time-periodic systems once the DC-side
products are linearized about an operating point; the interconnection
through (inverse) Park transforms is expressed with harmonic-domain
Toeplitz operators and closed algebraically per solver iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .harmonic import (
    TWO_PI,
    HarmonicIndexSet,
    HarmonicSignal,
    block_diag_per_order,
    park_coeffs,
)

# positive-sequence phase shifts of (a, b, c)
PHASE_SHIFTS = np.array([0.0, TWO_PI / 3.0, -TWO_PI / 3.0])


@dataclass(frozen=True)
class GainSet:
    """PI gains of one control stage."""

    k_fb: float
    t_fb: float
    k_ft: float

    @property
    def k_ff(self) -> float:
        # no explicit reference feed-forward: each stage's integrator already
        # guarantees zero steady-state tracking error, and a unit feed-forward
        # would inject the (dimensionally unrelated) reference of the outer
        # stage directly into the inner one, degrading harmonic rejection
        return 0.0

    @property
    def k_ffb(self) -> float:
        return self.k_ff + self.k_fb


@dataclass(frozen=True)
class CiderParams:
    """Filter elements and per-stage gains (phases identical)."""

    l_alpha: float
    r_alpha: float
    c_phi: float
    g_phi: float
    l_gamma: float
    r_gamma: float
    c_delta: float
    g_delta: float
    gains_alpha: GainSet
    gains_phi: GainSet
    gains_gamma: GainSet
    gains_delta: GainSet
    rated_va: float = 60e3


@dataclass(frozen=True)
class Setpoints:
    p_w: float
    q_var: float
    v_dc: float


@dataclass
class OperatingPoint:
    """Spectra the linearized DC-side products are anchored to."""

    v_alpha_ref: HarmonicSignal  # actuator reference voltage, phase frame
    i_alpha: HarmonicSignal  # converter-side filter current, phase frame
    v_dc: HarmonicSignal  # DC-link voltage


@dataclass
class LtpModel:
    """State-space matrices of an LTP system as {order: block} maps."""

    n_x: int
    n_u: int
    n_w: int
    n_y: int
    a: dict
    b: dict
    c: dict
    d: dict
    e: dict
    f: dict


def _add(coeffs: dict, h: int, block: np.ndarray):
    if h in coeffs:
        coeffs[h] = coeffs[h] + block
    else:
        coeffs[h] = block.astype(complex)


def build_power_hardware(
    params: CiderParams,
    setpoints: Setpoints,
    op: OperatingPoint,
    index_set: HarmonicIndexSet,
) -> LtpModel:
    """LCL filter with averaged DC link, linearized about the operating point.

    States: (i_alpha[3], v_phi[3], i_gamma[3], v_dc).
    Inputs: actuator reference voltage in the phase frame.
    Disturbances: (v_gamma[3], p_set/v_dc_set, op. actuator voltage[3]).
    Outputs: (states[10], v_gamma[3], DC-equivalent source current).
    """
    la, ra = params.l_alpha, params.r_alpha
    cf, gf = params.c_phi, params.g_phi
    lg, rg = params.l_gamma, params.r_gamma
    cd, gd = params.c_delta, params.g_delta
    p_set, v_set = setpoints.p_w, setpoints.v_dc
    eye3 = np.eye(3)

    a0 = np.zeros((10, 10))
    a0[0:3, 0:3] = -(ra / la) * eye3
    a0[0:3, 3:6] = -(1.0 / la) * eye3
    a0[3:6, 0:3] = (1.0 / cf) * eye3
    a0[3:6, 3:6] = -(gf / cf) * eye3
    a0[3:6, 6:9] = -(1.0 / cf) * eye3
    a0[6:9, 3:6] = (1.0 / lg) * eye3
    a0[6:9, 6:9] = -(rg / lg) * eye3
    a0[9, 9] = -gd / cd - p_set / (cd * v_set**2)

    e0 = np.zeros((10, 7))
    e0[6:9, 0:3] = -(1.0 / lg) * eye3
    e0[9, 3] = 2.0 / cd

    c0 = np.zeros((14, 10))
    c0[0:10, 0:10] = np.eye(10)
    c0[13, 9] = -p_set / v_set**2

    f0 = np.zeros((14, 7))
    f0[10:13, 0:3] = eye3
    f0[13, 3] = 2.0

    a = {0: a0.astype(complex)}
    b = {}
    e = {0: e0.astype(complex)}
    v_star = op.v_alpha_ref.coeffs
    i_al = op.i_alpha.coeffs
    v_dc = op.v_dc.coeffs
    for h in index_set.orders:
        k = index_set.idx(h)
        vs = v_star[:, k]
        ia = i_al[:, k]
        vd = v_dc[0, k]
        if vs.any() or ia.any() or vd:
            ah = np.zeros((10, 10), dtype=complex)
            ah[0:3, 9] = vs / (la * v_set)
            ah[9, 0:3] = -vs / (cd * v_set)
            _add(a, h, ah)
            bh = np.zeros((10, 3), dtype=complex)
            bh[0:3, 0:3] = vd / (la * v_set) * eye3
            bh[9, 0:3] = -ia / (cd * v_set)
            _add(b, h, bh)
            eh = np.zeros((10, 7), dtype=complex)
            eh[0:3, 4:7] = -vd / (la * v_set) * eye3
            eh[9, 4:7] = ia / (cd * v_set)
            _add(e, h, eh)
    if not b:
        b[0] = np.zeros((10, 3), dtype=complex)
    return LtpModel(
        n_x=10, n_u=3, n_w=7, n_y=14,
        a=a, b=b, c={0: c0.astype(complex)}, d={0: np.zeros((14, 3), dtype=complex)},
        e=e, f={0: f0.astype(complex)},
    )


def build_control_software(params: CiderParams) -> LtpModel:
    """Cascaded PI controller in DQ coordinates, including the DC-voltage loop.

    States: integrators of (di_alpha[2], dv_phi[2], di_gamma[2], dv_dc).
    Inputs: DQ measurements (i_alpha, v_phi, i_gamma) + (v_dc, v_gammaDQ, i_dc_src).
    Disturbances: (q-axis current reference, DC voltage setpoint).
    Outputs: actuator voltage reference in DQ.
    """
    ga, gp, gg, gd = params.gains_alpha, params.gains_phi, params.gains_gamma, params.gains_delta
    i2 = np.eye(2)
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    # The DC-link capacitor is discharged by the controlled (export) current,
    # opposite to the AC stages where the controlled current charges the
    # element. The voltage error therefore enters the DC PI with opposite
    # sign (v_dc - V*): an overcharged link must increase the export current.
    kd_ref = gd.k_ff - gd.k_fb

    a0 = np.zeros((7, 7))
    a0[0:2, 2:4] = (gp.k_fb / gp.t_fb) * i2
    a0[0:2, 4:6] = gp.k_ffb * (gg.k_fb / gg.t_fb) * i2
    a0[0:2, 6] = gp.k_ffb * gg.k_ffb * (gd.k_fb / gd.t_fb) * e1
    a0[2:4, 4:6] = (gg.k_fb / gg.t_fb) * i2
    a0[2:4, 6] = gg.k_ffb * (gd.k_fb / gd.t_fb) * e1
    a0[4, 6] = gd.k_fb / gd.t_fb

    b0 = np.zeros((7, 10))
    b0[0:2, 0:2] = -i2
    b0[0:2, 2:4] = -gp.k_fb * i2
    b0[0:2, 4:6] = (gp.k_ft - gp.k_ffb * gg.k_fb) * i2
    b0[0:2, 6] = gp.k_ffb * gg.k_ffb * gd.k_fb * e1
    b0[0:2, 7:9] = gp.k_ffb * gg.k_ft * i2
    b0[0:2, 9] = gp.k_ffb * gg.k_ffb * gd.k_ft * e1
    b0[2:4, 2:4] = -i2
    b0[2:4, 4:6] = -gg.k_fb * i2
    b0[2:4, 6] = gg.k_ffb * gd.k_fb * e1
    b0[2:4, 7:9] = gg.k_ft * i2
    b0[2:4, 9] = gg.k_ffb * gd.k_ft * e1
    b0[4, 4] = -1.0
    b0[4, 6] = gd.k_fb
    b0[4, 9] = gd.k_ft
    b0[5, 5] = -1.0
    b0[6, 6] = 1.0

    e0 = np.zeros((7, 2))
    e0[0:2, 0] = gp.k_ffb * gg.k_ffb * e2
    e0[0:2, 1] = gp.k_ffb * gg.k_ffb * kd_ref * e1
    e0[2:4, 0] = gg.k_ffb * e2
    e0[2:4, 1] = gg.k_ffb * kd_ref * e1
    e0[4, 1] = kd_ref
    e0[5, 0] = 1.0
    e0[6, 1] = -1.0

    c0 = np.zeros((2, 7))
    c0[:, 0:2] = (ga.k_fb / ga.t_fb) * i2
    c0[:, 2:4] = ga.k_ffb * (gp.k_fb / gp.t_fb) * i2
    c0[:, 4:6] = ga.k_ffb * gp.k_ffb * (gg.k_fb / gg.t_fb) * i2
    c0[:, 6] = ga.k_ffb * gp.k_ffb * gg.k_ffb * (gd.k_fb / gd.t_fb) * e1

    d0 = np.zeros((2, 10))
    d0[:, 0:2] = -ga.k_fb * i2
    d0[:, 2:4] = (ga.k_ft - ga.k_ffb * gp.k_fb) * i2
    d0[:, 4:6] = ga.k_ffb * (gp.k_ft - gp.k_ffb * gg.k_fb) * i2
    d0[:, 6] = ga.k_ffb * gp.k_ffb * gg.k_ffb * gd.k_fb * e1
    d0[:, 7:9] = ga.k_ffb * gp.k_ffb * gg.k_ft * i2
    d0[:, 9] = ga.k_ffb * gp.k_ffb * gg.k_ffb * gd.k_ft * e1

    f0 = np.zeros((2, 2))
    f0[:, 0] = ga.k_ffb * gp.k_ffb * gg.k_ffb * e2
    f0[:, 1] = ga.k_ffb * gp.k_ffb * gg.k_ffb * kd_ref * e1

    return LtpModel(
        n_x=7, n_u=10, n_w=2, n_y=2,
        a={0: a0.astype(complex)}, b={0: b0.astype(complex)},
        c={0: c0.astype(complex)}, d={0: d0.astype(complex)},
        e={0: e0.astype(complex)}, f={0: f0.astype(complex)},
    )


def build_power_hardware_ac_only(params: CiderParams) -> LtpModel:
    """LCL filter with an ideal actuator (no DC side)."""
    la, ra = params.l_alpha, params.r_alpha
    cf, gf = params.c_phi, params.g_phi
    lg, rg = params.l_gamma, params.r_gamma
    eye3 = np.eye(3)

    a0 = np.zeros((9, 9))
    a0[0:3, 0:3] = -(ra / la) * eye3
    a0[0:3, 3:6] = -(1.0 / la) * eye3
    a0[3:6, 0:3] = (1.0 / cf) * eye3
    a0[3:6, 3:6] = -(gf / cf) * eye3
    a0[3:6, 6:9] = -(1.0 / cf) * eye3
    a0[6:9, 3:6] = (1.0 / lg) * eye3
    a0[6:9, 6:9] = -(rg / lg) * eye3

    b0 = np.zeros((9, 3))
    b0[0:3, 0:3] = (1.0 / la) * eye3
    e0 = np.zeros((9, 3))
    e0[6:9, 0:3] = -(1.0 / lg) * eye3
    c0 = np.vstack([np.eye(9), np.zeros((3, 9))])
    f0 = np.vstack([np.zeros((9, 3)), eye3])
    return LtpModel(
        n_x=9, n_u=3, n_w=3, n_y=12,
        a={0: a0.astype(complex)}, b={0: b0.astype(complex)},
        c={0: c0.astype(complex)}, d={0: np.zeros((12, 3), dtype=complex)},
        e={0: e0.astype(complex)}, f={0: f0.astype(complex)},
    )


def build_control_software_ac_only(params: CiderParams) -> LtpModel:
    """Cascaded PI controller without the DC-voltage loop.

    Disturbances are the DQ current references computed from the setpoints.
    """
    ga, gp, gg = params.gains_alpha, params.gains_phi, params.gains_gamma
    i2 = np.eye(2)

    a0 = np.zeros((6, 6))
    a0[0:2, 2:4] = (gp.k_fb / gp.t_fb) * i2
    a0[0:2, 4:6] = gp.k_ffb * (gg.k_fb / gg.t_fb) * i2
    a0[2:4, 4:6] = (gg.k_fb / gg.t_fb) * i2

    b0 = np.zeros((6, 8))
    b0[0:2, 0:2] = -i2
    b0[0:2, 2:4] = -gp.k_fb * i2
    b0[0:2, 4:6] = (gp.k_ft - gp.k_ffb * gg.k_fb) * i2
    b0[0:2, 6:8] = gp.k_ffb * gg.k_ft * i2
    b0[2:4, 2:4] = -i2
    b0[2:4, 4:6] = -gg.k_fb * i2
    b0[2:4, 6:8] = gg.k_ft * i2
    b0[4:6, 4:6] = -i2

    e0 = np.zeros((6, 2))
    e0[0:2, :] = gp.k_ffb * gg.k_ffb * i2
    e0[2:4, :] = gg.k_ffb * i2
    e0[4:6, :] = i2

    c0 = np.zeros((2, 6))
    c0[:, 0:2] = (ga.k_fb / ga.t_fb) * i2
    c0[:, 2:4] = ga.k_ffb * (gp.k_fb / gp.t_fb) * i2
    c0[:, 4:6] = ga.k_ffb * gp.k_ffb * (gg.k_fb / gg.t_fb) * i2

    d0 = np.zeros((2, 8))
    d0[:, 0:2] = -ga.k_fb * i2
    d0[:, 2:4] = (ga.k_ft - ga.k_ffb * gp.k_fb) * i2
    d0[:, 4:6] = ga.k_ffb * (gp.k_ft - gp.k_ffb * gg.k_fb) * i2
    d0[:, 6:8] = ga.k_ffb * gp.k_ffb * gg.k_ft * i2

    f0 = ga.k_ffb * gp.k_ffb * gg.k_ffb * i2
    return LtpModel(
        n_x=6, n_u=8, n_w=2, n_y=2,
        a={0: a0.astype(complex)}, b={0: b0.astype(complex)},
        c={0: c0.astype(complex)}, d={0: d0.astype(complex)},
        e={0: e0.astype(complex)}, f={0: f0.astype(complex)},
    )


def combine_subsystems(pi: LtpModel, kappa: LtpModel) -> LtpModel:
    """Stack two LTP systems block-diagonally (coupling comes from feedback)."""

    def merge(m_pi, m_kappa, rows_pi, rows_k, cols_pi, cols_k):
        out = {}
        for h, blk in m_pi.items():
            big = np.zeros((rows_pi + rows_k, cols_pi + cols_k), dtype=complex)
            big[:rows_pi, :cols_pi] = blk
            out[h] = big
        for h, blk in m_kappa.items():
            big = out.get(h)
            if big is None:
                big = np.zeros((rows_pi + rows_k, cols_pi + cols_k), dtype=complex)
                out[h] = big
            big[rows_pi:, cols_pi:] += blk
        return out

    return LtpModel(
        n_x=pi.n_x + kappa.n_x,
        n_u=pi.n_u + kappa.n_u,
        n_w=pi.n_w + kappa.n_w,
        n_y=pi.n_y + kappa.n_y,
        a=merge(pi.a, kappa.a, pi.n_x, kappa.n_x, pi.n_x, kappa.n_x),
        b=merge(pi.b, kappa.b, pi.n_x, kappa.n_x, pi.n_u, kappa.n_u),
        c=merge(pi.c, kappa.c, pi.n_y, kappa.n_y, pi.n_x, kappa.n_x),
        d=merge(pi.d, kappa.d, pi.n_y, kappa.n_y, pi.n_u, kappa.n_u),
        e=merge(pi.e, kappa.e, pi.n_x, kappa.n_x, pi.n_w, kappa.n_w),
        f=merge(pi.f, kappa.f, pi.n_y, kappa.n_y, pi.n_w, kappa.n_w),
    )


def lift_sparse(index_set: HarmonicIndexSet, coeffs: dict, shape) -> sp.csr_matrix:
    """Sparse block-Toeplitz lift of {order: (p, q) block}."""
    p, q = shape
    n = index_set.n
    rows, cols, vals = [], [], []
    for h, blk in coeffs.items():
        r, c = np.nonzero(blk)
        v = blk[r, c]
        for m in range(n):
            k = m - h
            if 0 <= k < n:
                rows.append(r + m * p)
                cols.append(c + k * q)
                vals.append(v)
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n * p, n * q), dtype=complex)


def derivative_sparse(index_set: HarmonicIndexSet, channels: int) -> sp.csr_matrix:
    n = index_set.n
    diag = np.repeat(1j * TWO_PI * index_set.f1 * index_set.orders, channels)
    return sp.diags(diag.astype(complex), format="csr")


class ClosedLoop:
    """Harmonic-domain closed loop of an LTP plant with feedback u = T y.

    Solves the coupled system for states and outputs given the stacked
    disturbance spectrum; the factorization is reused across right-hand
    sides (mismatch evaluation, Jacobian columns, operating-point refresh).
    """

    def __init__(self, model: LtpModel, t_coeffs: dict, index_set: HarmonicIndexSet):
        self.model = model
        self.index_set = index_set
        n = index_set.n
        a = lift_sparse(index_set, model.a, (model.n_x, model.n_x))
        b = lift_sparse(index_set, model.b, (model.n_x, model.n_u))
        c = lift_sparse(index_set, model.c, (model.n_y, model.n_x))
        d = lift_sparse(index_set, model.d, (model.n_y, model.n_u))
        self.e = lift_sparse(index_set, model.e, (model.n_x, model.n_w))
        self.f = lift_sparse(index_set, model.f, (model.n_y, model.n_w))
        t = lift_sparse(index_set, t_coeffs, (model.n_u, model.n_y))
        k = derivative_sparse(index_set, model.n_x) - a
        eye_y = sp.identity(n * model.n_y, dtype=complex, format="csr")
        system = sp.bmat(
            [[k, -(b @ t)], [-c, eye_y - d @ t]], format="csc"
        )
        self._lu = splu(system)
        self._nx_lift = n * model.n_x

    def solve_output(self, w: np.ndarray) -> np.ndarray:
        """Stacked output spectrum for stacked disturbance spectrum w."""
        rhs = np.concatenate([self.e @ w, self.f @ w], axis=0)
        sol = self._lu.solve(rhs)
        return sol[self._nx_lift :]

    def output_gain(self, w_directions: np.ndarray) -> np.ndarray:
        """Outputs for many disturbance columns at once."""
        rhs = np.vstack([self.e @ w_directions, self.f @ w_directions])
        return self._lu.solve(np.asarray(rhs))[self._nx_lift :]

    def full_gain(self) -> np.ndarray:
        """Dense disturbance-to-output gain (tests and diagnostics only)."""
        n_w = self.index_set.n * self.model.n_w
        return self.output_gain(np.eye(n_w, dtype=complex))


def reciprocal_taylor(v_spec: np.ndarray, index_set: HarmonicIndexSet):
    """Second-order Taylor expansion of 1/v about its DC coefficient.

    v_spec is the stacked (single channel) spectrum of a signal with a
    dominant DC component v0; returns the truncated spectrum of 1/v and
    its Jacobian with respect to v_spec.
    """
    n = index_set.n
    k0 = index_set.idx(0)
    v0 = v_spec[k0]
    if abs(v0) < 1e-12:
        raise ValueError("reciprocal expansion needs a nonzero DC coefficient")
    u = v_spec.copy()
    u[k0] = 0.0
    conv = np.convolve(u, u)[index_set.h_max : index_set.h_max + n]
    recip = -u / v0**2 + conv / v0**3
    recip[k0] += 1.0 / v0

    jac = np.zeros((n, n), dtype=complex)
    # Toeplitz of u: d conv[m] / d u[k] = 2 u[m-k]
    for k in range(n):
        lo = max(0, k - index_set.h_max)
        hi = min(n, k + index_set.h_max + 1)
        jac[lo:hi, k] = 2.0 * u[lo - k + index_set.h_max : hi - k + index_set.h_max] / v0**3
    jac -= np.eye(n) / v0**2
    # the DC coefficient enters through v0 rather than through u
    col0 = 2.0 * u / v0**3 - 3.0 * conv / v0**4
    col0[k0] = -1.0 / v0**2
    jac[:, k0] = col0
    return recip, jac


@dataclass(frozen=True)
class TheveninSource:
    """Grid-forming Thevenin equivalent: v = emf - z(h) * i."""

    v_rms: float
    z_abs: float
    r_to_x: float
    harmonics: tuple  # ((order, magnitude_pu, angle_rad), ...)

    @property
    def x(self) -> float:
        return self.z_abs / np.sqrt(1.0 + self.r_to_x**2)

    @property
    def r(self) -> float:
        return self.r_to_x * self.x

    def emf_signal(self, index_set: HarmonicIndexSet) -> HarmonicSignal:
        """Balanced EMF spectrum in the phase frame (fundamental positive
        sequence; harmonic sequences follow from the waveform displacement)."""
        sig = HarmonicSignal.zeros(index_set, 3)
        peak = np.sqrt(2.0) * self.v_rms
        for order, mag, ang in self.harmonics:
            if order > index_set.h_max:
                continue
            # identical waveform on every phase, displaced by a third of a
            # period: harmonic h is displaced by h times the fundamental shift
            coeff = 0.5 * mag * peak * np.exp(1j * (ang - order * PHASE_SHIFTS))
            sig.coeffs[:, index_set.idx(order)] = coeff
            sig.coeffs[:, index_set.idx(-order)] = np.conj(coeff)
        return sig

    def impedance_lift(self, index_set: HarmonicIndexSet) -> np.ndarray:
        """Block-diagonal phase-frame impedance, reactance linear in order."""
        return block_diag_per_order(
            index_set, lambda h: (self.r + 1j * h * self.x) * np.eye(3)
        )


def balanced_fundamental(index_set, peak: float, angle: float = 0.0) -> HarmonicSignal:
    """Balanced positive-sequence three-phase cosines."""
    return HarmonicSignal.cosine(
        index_set, peak * np.ones(3), angle - PHASE_SHIFTS
    )


class FollowerCider:
    """Grid-following converter attached to one network node.

    Wraps the LTP subsystems, the Park-transform feedback wiring and the
    nonlinear reference calculation into residual/Jacobian evaluations
    against the stacked node-voltage spectrum.
    """

    def __init__(self, params: CiderParams, setpoints: Setpoints,
                 index_set: HarmonicIndexSet, with_dc: bool = True,
                 v_nom_rms: float = 230.0):
        self.params = params
        self.setpoints = setpoints
        self.index_set = index_set
        self.with_dc = with_dc
        self.v_nom_rms = v_nom_rms
        self.op = self.default_operating_point()
        self._park = park_coeffs()
        self._park_inv = park_coeffs(inverse=True)
        n = index_set.n
        self._park_d_lift = lift_sparse(
            index_set,
            {h: blk[0:1, :] for h, blk in self._park.items()},
            (1, 3),
        ).toarray()
        self._loop = None
        if with_dc:
            self._i_gamma_channels = (6, 9)  # within 16 outputs
            self.n_y = 16
            self.n_w = 9
        else:
            self._i_gamma_channels = (6, 9)  # within 14 outputs
            self.n_y = 14
            self.n_w = 5

    # --- model assembly -------------------------------------------------

    def default_operating_point(self) -> OperatingPoint:
        """Balanced fundamental consistent with the setpoints at nominal voltage."""
        idx = self.index_set
        v_nom_peak = np.sqrt(2.0) * self.v_nom_rms
        v_ref = balanced_fundamental(idx, v_nom_peak)
        s_phase = (self.setpoints.p_w + 1j * self.setpoints.q_var) / 3.0
        i_rms = np.conj(s_phase / self.v_nom_rms)
        i_sig = HarmonicSignal.zeros(idx, 3)
        coeff = (np.sqrt(2.0) / 2.0) * i_rms * np.exp(-1j * PHASE_SHIFTS)
        i_sig.coeffs[:, idx.idx(1)] = coeff
        i_sig.coeffs[:, idx.idx(-1)] = np.conj(coeff)
        v_dc = HarmonicSignal.constant(idx, [self.setpoints.v_dc])
        return OperatingPoint(v_alpha_ref=v_ref, i_alpha=i_sig, v_dc=v_dc)

    def _feedback_coeffs(self) -> dict:
        """u = T y wiring: Park the phase-frame measurements, inverse-Park
        the controller output back to the actuator."""
        if self.with_dc:
            n_u, n_y = 13, 16
            pairs = [(3, 0), (5, 3), (7, 6), (10, 10)]  # (u_row, y_col) DQ blocks
            direct = [(9, 9), (12, 13)]  # v_dc, DC source current
            inv_pos = (0, 14)
        else:
            n_u, n_y = 11, 14
            pairs = [(3, 0), (5, 3), (7, 6), (9, 9)]
            direct = []
            inv_pos = (0, 12)
        t1 = np.zeros((n_u, n_y), dtype=complex)
        tm1 = np.zeros((n_u, n_y), dtype=complex)
        t0 = np.zeros((n_u, n_y), dtype=complex)
        for ur, yc in pairs:
            t1[ur : ur + 2, yc : yc + 3] = self._park[1]
            tm1[ur : ur + 2, yc : yc + 3] = self._park[-1]
        t1[inv_pos[0] : inv_pos[0] + 3, inv_pos[1] : inv_pos[1] + 2] = self._park_inv[1]
        tm1[inv_pos[0] : inv_pos[0] + 3, inv_pos[1] : inv_pos[1] + 2] = self._park_inv[-1]
        for ur, yc in direct:
            t0[ur, yc] = 1.0
        return {0: t0, 1: t1, -1: tm1}

    def rebuild(self):
        """Assemble the closed loop for the current operating point."""
        if self.with_dc:
            pi = build_power_hardware(self.params, self.setpoints, self.op, self.index_set)
            kappa = build_control_software(self.params)
        else:
            pi = build_power_hardware_ac_only(self.params)
            kappa = build_control_software_ac_only(self.params)
        model = combine_subsystems(pi, kappa)
        self._loop = ClosedLoop(model, self._feedback_coeffs(), self.index_set)
        return self._loop

    @property
    def loop(self) -> ClosedLoop:
        if self._loop is None:
            self.rebuild()
        return self._loop

    # --- disturbance assembly -------------------------------------------

    def _reference(self, vr: np.ndarray):
        """DQ current references and their Jacobians w.r.t. the node voltage."""
        v_d = self._park_d_lift @ vr
        recip, jac = reciprocal_taylor(v_d, self.index_set)
        jac = jac @ self._park_d_lift
        return recip, jac

    def build_disturbance(self, vr: np.ndarray) -> np.ndarray:
        """Stacked disturbance spectrum for node voltage spectrum vr."""
        idx = self.index_set
        n = idx.n
        w = np.zeros((n, self.n_w), dtype=complex)
        w[:, 0:3] = vr.reshape(n, 3)
        recip, _ = self._reference(vr)
        if self.with_dc:
            w[idx.idx(0), 3] = self.setpoints.p_w / self.setpoints.v_dc
            w[:, 4:7] = self.op.v_alpha_ref.coeffs.T
            # delivering +Q requires a negative Q-axis current in this
            # Park convention (Q_delivered = -v_D * i_Q at v_Q = 0)
            w[:, 7] = -self.setpoints.q_var * recip
            w[idx.idx(0), 8] = self.setpoints.v_dc
        else:
            w[:, 3] = self.setpoints.p_w * recip
            w[:, 4] = -self.setpoints.q_var * recip
        return w.reshape(-1)

    # --- solver interface -------------------------------------------------

    def output_spectrum(self, vr: np.ndarray) -> np.ndarray:
        return self.loop.solve_output(self.build_disturbance(vr))

    def _channels(self, y: np.ndarray, lo: int, hi: int) -> np.ndarray:
        """Slice output channels [lo, hi) from the stacked output spectrum."""
        return y.reshape(self.index_set.n, self.n_y)[:, lo:hi].reshape(-1)

    def injected_current(self, vr: np.ndarray, return_output: bool = False):
        y = self.output_spectrum(vr)
        i_g = self._channels(y, *self._i_gamma_channels)
        return (i_g, y) if return_output else i_g

    def current_jacobian(self, vr: np.ndarray) -> np.ndarray:
        """d(injected current)/d(node voltage), both stacked spectra."""
        idx = self.index_set
        n = idx.n
        _, ref_jac = self._reference(vr)
        n_vr = 3 * n
        w_dirs = np.zeros((self.n_w * n, n_vr), dtype=complex)
        for k in range(n_vr):
            w = np.zeros((n, self.n_w), dtype=complex)
            w[k // 3, k % 3] = 1.0
            if self.with_dc:
                w[:, 7] = -self.setpoints.q_var * ref_jac[:, k]
            else:
                w[:, 3] = self.setpoints.p_w * ref_jac[:, k]
                w[:, 4] = -self.setpoints.q_var * ref_jac[:, k]
            w_dirs[:, k] = w.reshape(-1)
        y_cols = self.loop.output_gain(w_dirs)
        lo, hi = self._i_gamma_channels
        return y_cols.reshape(n, self.n_y, n_vr)[:, lo:hi, :].reshape(3 * n, n_vr)

    def refresh_operating_point(self, vr: np.ndarray):
        """Update the linearization anchor from the latest closed-loop output."""
        if not self.with_dc:
            return
        idx = self.index_set
        y = self.output_spectrum(vr)
        ych = y.reshape(idx.n, self.n_y)
        park_inv_lift = lift_sparse(idx, self._park_inv, (3, 2))
        v_ref_vec = park_inv_lift @ ych[:, 14:16].reshape(-1)
        self.op = OperatingPoint(
            v_alpha_ref=HarmonicSignal.from_vector(idx, v_ref_vec, 3),
            i_alpha=HarmonicSignal(idx, ych[:, 0:3].T),
            v_dc=HarmonicSignal(idx, ych[:, 9:10].T),
        )
        self.rebuild()
