"""Fixed-step RK4 integration kernels for the time-domain reference solver.

The kernels are compiled with numba when available; setting the environment
variable HARMFLOW_NO_NUMBA=1 selects the pure-numpy interpretation of the
same functions (identical semantics, much slower).
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_DISABLED = os.environ.get("HARMFLOW_NO_NUMBA", "").lower() in ("1", "true", "yes")

try:
    if NUMBA_DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def maybe_njit(func):
    if HAVE_NUMBA:
        return numba.njit(func, cache=True, fastmath=False)
    return func


SQ23 = np.sqrt(2.0 / 3.0)
TWO_PI = 2.0 * np.pi
N_CIDER_STATES = 17

# cider parameter row layout
(P_LA, P_RA, P_CF, P_GF, P_LG, P_RG, P_CD, P_GD,
 P_KFB_A, P_TFB_A, P_KFT_A, P_KFF_A,
 P_KFB_F, P_TFB_F, P_KFT_F, P_KFF_F,
 P_KFB_G, P_TFB_G, P_KFT_G, P_KFF_G,
 P_KFB_D, P_TFB_D, P_KFT_D, P_KFF_D,
 P_PSET, P_QSET, P_VSET) = range(27)


@maybe_njit
def _park_rows(theta):
    """Rows of the power-invariant Park matrix at angle theta."""
    c = np.empty(3)
    s = np.empty(3)
    for p in range(3):
        shift = 0.0
        if p == 1:
            shift = TWO_PI / 3.0
        elif p == 2:
            shift = -TWO_PI / 3.0
        ang = theta - shift
        c[p] = SQ23 * np.cos(ang)
        s[p] = -SQ23 * np.sin(ang)
    return c, s


@maybe_njit
def _cider_rest(theta, xc, v_g, d_i_g, prm, dxc):
    """Controller and remaining hardware derivatives of one converter.

    xc = (i_a[0:3], v_f[3:6], i_g[6:9], v_dc[9], integrators[10:17]);
    dxc[6:9] (grid-side current) must already be set by the caller.
    """
    row_d, row_q = _park_rows(theta)
    i_a_d = row_d[0] * xc[0] + row_d[1] * xc[1] + row_d[2] * xc[2]
    i_a_q = row_q[0] * xc[0] + row_q[1] * xc[1] + row_q[2] * xc[2]
    v_f_d = row_d[0] * xc[3] + row_d[1] * xc[4] + row_d[2] * xc[5]
    v_f_q = row_q[0] * xc[3] + row_q[1] * xc[4] + row_q[2] * xc[5]
    i_g_d = row_d[0] * xc[6] + row_d[1] * xc[7] + row_d[2] * xc[8]
    i_g_q = row_q[0] * xc[6] + row_q[1] * xc[7] + row_q[2] * xc[8]
    v_g_d = row_d[0] * v_g[0] + row_d[1] * v_g[1] + row_d[2] * v_g[2]
    v_g_q = row_q[0] * v_g[0] + row_q[1] * v_g[1] + row_q[2] * v_g[2]

    v_dc = xc[9]
    i_eps = prm[P_PSET] / v_dc
    # DC-link error with opposite orientation to the AC stages: the export
    # current discharges the link, so overvoltage must raise the reference
    dv_dc_err = v_dc - prm[P_VSET]

    # DC-voltage PI routes into the d-axis current reference
    i_ref_d = (prm[P_KFB_D] * (dv_dc_err + xc[16] / prm[P_TFB_D])
               + prm[P_KFT_D] * i_eps + prm[P_KFF_D] * prm[P_VSET])
    # delivering +Q requires a negative Q-axis current in this Park frame
    i_ref_q = -prm[P_QSET] / v_g_d

    # grid-side current loop -> filter-capacitor voltage reference
    v_ref_f_d = (prm[P_KFB_G] * ((i_ref_d - i_g_d) + xc[14] / prm[P_TFB_G])
                 + prm[P_KFT_G] * v_g_d + prm[P_KFF_G] * i_ref_d)
    v_ref_f_q = (prm[P_KFB_G] * ((i_ref_q - i_g_q) + xc[15] / prm[P_TFB_G])
                 + prm[P_KFT_G] * v_g_q + prm[P_KFF_G] * i_ref_q)

    # capacitor voltage loop -> converter-side current reference
    i_ref_a_d = (prm[P_KFB_F] * ((v_ref_f_d - v_f_d) + xc[12] / prm[P_TFB_F])
                 + prm[P_KFT_F] * i_g_d + prm[P_KFF_F] * v_ref_f_d)
    i_ref_a_q = (prm[P_KFB_F] * ((v_ref_f_q - v_f_q) + xc[13] / prm[P_TFB_F])
                 + prm[P_KFT_F] * i_g_q + prm[P_KFF_F] * v_ref_f_q)

    # converter-side current loop -> actuator voltage reference
    v_ref_a_d = (prm[P_KFB_A] * ((i_ref_a_d - i_a_d) + xc[10] / prm[P_TFB_A])
                 + prm[P_KFT_A] * v_f_d + prm[P_KFF_A] * i_ref_a_d)
    v_ref_a_q = (prm[P_KFB_A] * ((i_ref_a_q - i_a_q) + xc[11] / prm[P_TFB_A])
                 + prm[P_KFT_A] * v_f_q + prm[P_KFF_A] * i_ref_a_q)

    # averaged actuator: the reference scales with the DC-link voltage
    scale = v_dc / prm[P_VSET]
    i_delta = 0.0
    for p in range(3):
        v_ref_abc = row_d[p] * v_ref_a_d + row_q[p] * v_ref_a_q
        v_a = v_ref_abc * scale
        i_delta += v_ref_abc * xc[p] / prm[P_VSET]
        dxc[p] = (v_a - xc[3 + p] - prm[P_RA] * xc[p]) / prm[P_LA]
        dxc[3 + p] = (xc[p] - xc[6 + p] - prm[P_GF] * xc[3 + p]) / prm[P_CF]
    dxc[9] = (i_eps - i_delta - prm[P_GD] * v_dc) / prm[P_CD]
    for p in range(3):
        dxc[6 + p] = d_i_g[p]

    dxc[10] = i_ref_a_d - i_a_d
    dxc[11] = i_ref_a_q - i_a_q
    dxc[12] = v_ref_f_d - v_f_d
    dxc[13] = v_ref_f_q - v_f_q
    dxc[14] = i_ref_d - i_g_d
    dxc[15] = i_ref_q - i_g_q
    dxc[16] = dv_dc_err


@maybe_njit
def _emf_at(t, f1, emf_orders, emf_amp, emf_phase, s, out):
    for p in range(3):
        v = 0.0
        for k in range(emf_orders.shape[0]):
            v += emf_amp[s, k, p] * np.cos(
                emf_orders[k] * TWO_PI * f1 * t + emf_phase[s, k, p]
            )
        out[p] = v


@maybe_njit
def _net_deriv(t, x, dx, f1,
               node_cinv,
               line_from, line_to, line_r, line_linv,
               te_node, te_r, te_linv,
               emf_orders, emf_amp, emf_phase,
               load_node, load_r, load_linv,
               cider_node, cider_prm,
               off_te, off_line, off_load, off_cider):
    n_nodes = node_cinv.shape[0]
    inj = np.zeros((n_nodes, 3))

    # grid-forming sources: EMF behind series R-L
    emf = np.empty(3)
    for s in range(te_node.shape[0]):
        base = off_te + 3 * s
        _emf_at(t, f1, emf_orders, emf_amp, emf_phase, s, emf)
        n = te_node[s]
        for p in range(3):
            inj[n, p] += x[base + p]
        for p in range(3):
            acc = 0.0
            for q in range(3):
                rhs_q = emf[q] - x[3 * n + q]
                for r in range(3):
                    rhs_q -= te_r[s, q, r] * x[base + r]
                acc += te_linv[s, p, q] * rhs_q
            dx[base + p] = acc

    # pi-section series branches
    for l in range(line_from.shape[0]):
        base = off_line + 3 * l
        nf, nt = line_from[l], line_to[l]
        for p in range(3):
            acc = 0.0
            for q in range(3):
                rhs_q = x[3 * nf + q] - x[3 * nt + q]
                for r in range(3):
                    rhs_q -= line_r[l, q, r] * x[base + r]
                acc += line_linv[l, p, q] * rhs_q
            dx[base + p] = acc
            inj[nf, p] -= x[base + p]
            inj[nt, p] += x[base + p]

    # series R-L loads
    for ld in range(load_node.shape[0]):
        base = off_load + 3 * ld
        n = load_node[ld]
        for p in range(3):
            dx[base + p] = load_linv[ld, p] * (
                x[3 * n + p] - load_r[ld, p] * x[base + p]
            )
            inj[n, p] -= x[base + p]

    # converters
    v_g = np.empty(3)
    d_i_g = np.empty(3)
    for c in range(cider_node.shape[0]):
        base = off_cider + N_CIDER_STATES * c
        n = cider_node[c]
        prm = cider_prm[c]
        xc = x[base : base + N_CIDER_STATES]
        dxc = dx[base : base + N_CIDER_STATES]
        for p in range(3):
            v_g[p] = x[3 * n + p]
            d_i_g[p] = (xc[3 + p] - v_g[p] - prm[P_RG] * xc[6 + p]) / prm[P_LG]
            inj[n, p] += xc[6 + p]
        theta = TWO_PI * f1 * t
        _cider_rest(theta, xc, v_g, d_i_g, prm, dxc)

    # node shunt capacitances close the KCL
    for n in range(n_nodes):
        for p in range(3):
            acc = 0.0
            for q in range(3):
                acc += node_cinv[n, p, q] * inj[n, q]
            dx[3 * n + p] = acc


@maybe_njit
def _direct_deriv(t, x, dx, f1,
                  emf_orders, emf_amp, emf_phase,
                  te_r_scalar, te_l_scalar, cider_prm):
    """Single converter connected straight to a Thevenin source.

    The source inductance is merged into the grid-side filter stage; the
    terminal voltage is recovered algebraically.
    """
    prm = cider_prm[0]
    emf = np.empty(3)
    _emf_at(t, f1, emf_orders, emf_amp, emf_phase, 0, emf)
    v_g = np.empty(3)
    d_i_g = np.empty(3)
    lg_tot = prm[P_LG] + te_l_scalar
    rg_tot = prm[P_RG] + te_r_scalar
    for p in range(3):
        d_i_g[p] = (x[3 + p] - emf[p] - rg_tot * x[6 + p]) / lg_tot
        # the injected current flows toward the source, so it raises the
        # terminal voltage above the EMF
        v_g[p] = emf[p] + te_r_scalar * x[6 + p] + te_l_scalar * d_i_g[p]
    theta = TWO_PI * f1 * t
    _cider_rest(theta, x, v_g, d_i_g, prm, dx)


@maybe_njit
def rk4_network(x, t0, dt, n_steps, rec, rec_idx, f1,
                node_cinv, line_from, line_to, line_r, line_linv,
                te_node, te_r, te_linv, emf_orders, emf_amp, emf_phase,
                load_node, load_r, load_linv, cider_node, cider_prm,
                off_te, off_line, off_load, off_cider):
    n = x.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    for i in range(n_steps):
        t = t0 + i * dt
        _net_deriv(t, x, k1, f1, node_cinv, line_from, line_to, line_r,
                   line_linv, te_node, te_r, te_linv, emf_orders, emf_amp,
                   emf_phase, load_node, load_r, load_linv, cider_node,
                   cider_prm, off_te, off_line, off_load, off_cider)
        for j in range(n):
            xt[j] = x[j] + 0.5 * dt * k1[j]
        _net_deriv(t + 0.5 * dt, xt, k2, f1, node_cinv, line_from, line_to,
                   line_r, line_linv, te_node, te_r, te_linv, emf_orders,
                   emf_amp, emf_phase, load_node, load_r, load_linv,
                   cider_node, cider_prm, off_te, off_line, off_load, off_cider)
        for j in range(n):
            xt[j] = x[j] + 0.5 * dt * k2[j]
        _net_deriv(t + 0.5 * dt, xt, k3, f1, node_cinv, line_from, line_to,
                   line_r, line_linv, te_node, te_r, te_linv, emf_orders,
                   emf_amp, emf_phase, load_node, load_r, load_linv,
                   cider_node, cider_prm, off_te, off_line, off_load, off_cider)
        for j in range(n):
            xt[j] = x[j] + dt * k3[j]
        _net_deriv(t + dt, xt, k4, f1, node_cinv, line_from, line_to, line_r,
                   line_linv, te_node, te_r, te_linv, emf_orders, emf_amp,
                   emf_phase, load_node, load_r, load_linv, cider_node,
                   cider_prm, off_te, off_line, off_load, off_cider)
        for j in range(n):
            x[j] = x[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        for j in range(rec_idx.shape[0]):
            rec[j, i] = x[rec_idx[j]]
    return t0 + n_steps * dt


@maybe_njit
def rk4_direct(x, t0, dt, n_steps, rec, rec_idx, f1,
               emf_orders, emf_amp, emf_phase,
               te_r_scalar, te_l_scalar, cider_prm):
    n = x.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    xt = np.empty(n)
    for i in range(n_steps):
        t = t0 + i * dt
        _direct_deriv(t, x, k1, f1, emf_orders, emf_amp, emf_phase,
                      te_r_scalar, te_l_scalar, cider_prm)
        for j in range(n):
            xt[j] = x[j] + 0.5 * dt * k1[j]
        _direct_deriv(t + 0.5 * dt, xt, k2, f1, emf_orders, emf_amp,
                      emf_phase, te_r_scalar, te_l_scalar, cider_prm)
        for j in range(n):
            xt[j] = x[j] + 0.5 * dt * k2[j]
        _direct_deriv(t + 0.5 * dt, xt, k3, f1, emf_orders, emf_amp,
                      emf_phase, te_r_scalar, te_l_scalar, cider_prm)
        for j in range(n):
            xt[j] = x[j] + dt * k3[j]
        _direct_deriv(t + dt, xt, k4, f1, emf_orders, emf_amp, emf_phase,
                      te_r_scalar, te_l_scalar, cider_prm)
        for j in range(n):
            x[j] = x[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        for j in range(rec_idx.shape[0]):
            rec[j, i] = x[rec_idx[j]]
    return t0 + n_steps * dt
