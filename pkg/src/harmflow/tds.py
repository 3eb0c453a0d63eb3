"""Nonlinear time-domain reference solver.

Integrates the full switching-averaged converter models coupled to the
lumped pi-section network with fixed-step RK4, runs until the waveforms are
periodic, and extracts Fourier coefficients with a rectangular window over
exactly five fundamental periods.  Serves as the built-in accuracy oracle
for the harmonic-domain solvers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kn
from .cider import FollowerCider, TheveninSource
from .harmonic import TWO_PI, HarmonicIndexSet
from .network import BranchSpec, NetworkSpec


@dataclass
class TdsOptions:
    dt: float = 2e-6
    max_periods: int = 100
    settle_tol_pu: float = 1e-6
    dft_periods: int = 5


@dataclass
class TdsResult:
    index_set: HarmonicIndexSet
    spectra: dict  # name -> (channels, n) complex coefficients
    periods_run: int
    settled: bool
    runtime_s: float
    jit: bool

    def get(self, name: str) -> np.ndarray:
        return self.spectra[name]


def _cider_param_row(cd: FollowerCider) -> np.ndarray:
    p, s = cd.params, cd.setpoints
    row = np.zeros(27)
    row[kn.P_LA], row[kn.P_RA] = p.l_alpha, p.r_alpha
    row[kn.P_CF], row[kn.P_GF] = p.c_phi, p.g_phi
    row[kn.P_LG], row[kn.P_RG] = p.l_gamma, p.r_gamma
    row[kn.P_CD], row[kn.P_GD] = p.c_delta, p.g_delta
    for off, g in ((kn.P_KFB_A, p.gains_alpha), (kn.P_KFB_F, p.gains_phi),
                   (kn.P_KFB_G, p.gains_gamma), (kn.P_KFB_D, p.gains_delta)):
        row[off : off + 4] = (g.k_fb, g.t_fb, g.k_ft, g.k_ff)
    row[kn.P_PSET], row[kn.P_QSET], row[kn.P_VSET] = s.p_w, s.q_var, s.v_dc
    return row


def _emf_arrays(te_list, index_set):
    orders = sorted({h for te in te_list for (h, _, _) in te.harmonics})
    k = len(orders)
    amp = np.zeros((len(te_list), k, 3))
    phase = np.zeros((len(te_list), k, 3))
    for s, te in enumerate(te_list):
        peak = np.sqrt(2.0) * te.v_rms
        for h, mag, ang in te.harmonics:
            j = orders.index(h)
            amp[s, j, :] = mag * peak
            phase[s, j, :] = ang - h * np.array([0.0, TWO_PI / 3.0, -TWO_PI / 3.0])
    return np.array(orders, dtype=np.float64), amp, phase


def _cider_initial_state(cd: FollowerCider, t0: float = 0.0) -> np.ndarray:
    """Start near the expected periodic orbit so the DC link never collapses
    through zero (the exact source current model divides by v_dc)."""
    x = np.zeros(kn.N_CIDER_STATES)
    op = cd.default_operating_point()
    i0 = op.i_alpha.sample(t0)[:, 0]
    x[0:3] = i0
    x[3:6] = op.v_alpha_ref.sample(t0)[:, 0]
    x[6:9] = i0
    x[9] = cd.setpoints.v_dc
    return x


def _dft(samples: np.ndarray, n_periods: int, index_set: HarmonicIndexSet) -> np.ndarray:
    """Two-sided coefficients from an exact n-period rectangular window."""
    n_s = samples.shape[-1]
    spec = np.fft.fft(samples, axis=-1) / n_s
    out = np.zeros(samples.shape[:-1] + (index_set.n,), dtype=complex)
    for h in index_set.orders:
        out[..., index_set.idx(h)] = spec[..., (n_periods * h) % n_s]
    return out


class _Recorder:
    """Named channel groups over the state vector."""

    def __init__(self):
        self.names = []
        self.slices = []
        self.indices = []
        self.scales = []

    def add(self, name, idx, scale):
        lo = sum(len(i) for i in self.indices)
        self.names.append(name)
        self.indices.append(np.asarray(idx, dtype=np.int64))
        self.slices.append(slice(lo, lo + len(idx)))
        self.scales.append(scale)

    @property
    def rec_idx(self):
        return np.concatenate(self.indices)


def simulate_network(net: NetworkSpec, te_sources: dict, ciders: dict,
                     index_set: HarmonicIndexSet,
                     options: TdsOptions = None) -> TdsResult:
    """Reference simulation of a full network scenario."""
    options = options or TdsOptions()
    t_start = time.perf_counter()
    n_nodes = len(net.nodes)
    f1 = index_set.f1

    # node shunt capacitance: sum of connected pi-section ends
    node_c = np.zeros((n_nodes, 3, 3))
    for ln in net.lines:
        c_end = ln.shunt_c_end()
        node_c[net.node_index(ln.from_node)] += c_end
        node_c[net.node_index(ln.to_node)] += c_end
    node_cinv = np.zeros_like(node_c)
    for n in range(n_nodes):
        if np.linalg.matrix_rank(node_c[n]) < 3:
            raise ValueError(
                f"node {net.nodes[n]} has no shunt capacitance; the network "
                "oracle needs every node on at least one pi-section line"
            )
        node_cinv[n] = np.linalg.inv(node_c[n])

    lines = list(net.lines)
    line_from = np.array([net.node_index(ln.from_node) for ln in lines], dtype=np.int64)
    line_to = np.array([net.node_index(ln.to_node) for ln in lines], dtype=np.int64)
    line_r = np.zeros((len(lines), 3, 3))
    line_linv = np.zeros((len(lines), 3, 3))
    for i, ln in enumerate(lines):
        r, l = ln.series_rl()
        line_r[i] = r
        line_linv[i] = np.linalg.inv(l)

    te_list = [te_sources[nd] for nd in net.forming]
    te_node = np.array([net.node_index(nd) for nd in net.forming], dtype=np.int64)
    te_r = np.stack([te.r * np.eye(3) for te in te_list]) if te_list else np.zeros((0, 3, 3))
    te_linv = np.stack([np.linalg.inv(te.x / (TWO_PI * f1) * np.eye(3)) for te in te_list]) \
        if te_list else np.zeros((0, 3, 3))
    emf_orders, emf_amp, emf_phase = _emf_arrays(te_list, index_set)

    load_node = np.array([net.node_index(ld.node) for ld in net.loads], dtype=np.int64)
    load_r = np.zeros((len(net.loads), 3))
    load_linv = np.zeros((len(net.loads), 3))
    for i, ld in enumerate(net.loads):
        r, l = ld.branch_rl(net.v_base_rms, net.f1)
        load_r[i] = r
        load_linv[i] = 1.0 / l

    cider_nodes = list(net.following)
    cider_node = np.array([net.node_index(nd) for nd in cider_nodes], dtype=np.int64)
    cider_prm = (np.stack([_cider_param_row(ciders[nd]) for nd in cider_nodes])
                 if cider_nodes else np.zeros((0, 27)))

    off_te = 3 * n_nodes
    off_line = off_te + 3 * len(te_list)
    off_load = off_line + 3 * len(lines)
    off_cider = off_load + 3 * len(net.loads)
    n_states = off_cider + kn.N_CIDER_STATES * len(cider_nodes)

    x = np.zeros(n_states)
    # start from nominal balanced voltages and DC links at their set value
    v0 = np.sqrt(2.0) * net.v_base_rms * np.cos(-np.array([0.0, TWO_PI / 3, -TWO_PI / 3]))
    for n in range(n_nodes):
        x[3 * n : 3 * n + 3] = v0
    for c, nd in enumerate(cider_nodes):
        x[off_cider + kn.N_CIDER_STATES * c : off_cider + kn.N_CIDER_STATES * (c + 1)] = \
            _cider_initial_state(ciders[nd])

    rec = _Recorder()
    v_scale = net.v_base_rms / np.sqrt(2.0)
    i_scale = net.p_base_w / (3.0 * net.v_base_rms * np.sqrt(2.0))
    for n, name in enumerate(net.nodes):
        rec.add(f"v:{name}", 3 * n + np.arange(3), v_scale)
    for s, name in enumerate(net.forming):
        rec.add(f"i:{name}", off_te + 3 * s + np.arange(3), i_scale)
    for i, ld in enumerate(net.loads):
        rec.add(f"i_load:{ld.node}", off_load + 3 * i + np.arange(3), i_scale)
    for c, name in enumerate(cider_nodes):
        base = off_cider + kn.N_CIDER_STATES * c
        rec.add(f"i:{name}", base + 6 + np.arange(3), i_scale)
        rec.add(f"v_dc:{name}", base + np.array([9]), v_scale)

    args = (f1, node_cinv, line_from, line_to, line_r, line_linv,
            te_node, te_r, te_linv, emf_orders, emf_amp, emf_phase,
            load_node, load_r, load_linv, cider_node, cider_prm,
            off_te, off_line, off_load, off_cider)
    runner = lambda x, t0, rec_buf, rec_idx, n_steps, dt: kn.rk4_network(
        x, t0, dt, n_steps, rec_buf, rec_idx, *args)
    return _run_periodic(x, runner, rec, index_set, options, t_start)


def simulate_direct(te: TheveninSource, cider: FollowerCider,
                    index_set: HarmonicIndexSet,
                    options: TdsOptions = None,
                    v_base_rms: float = 230.0,
                    p_base_w: float = 50e3) -> TdsResult:
    """Reference simulation of one converter on a Thevenin source."""
    options = options or TdsOptions()
    t_start = time.perf_counter()
    f1 = index_set.f1
    emf_orders, emf_amp, emf_phase = _emf_arrays([te], index_set)
    cider_prm = np.stack([_cider_param_row(cider)])
    x = _cider_initial_state(cider)

    rec = _Recorder()
    v_scale = v_base_rms / np.sqrt(2.0)
    i_scale = p_base_w / (3.0 * v_base_rms * np.sqrt(2.0))
    rec.add("i:R", 6 + np.arange(3), i_scale)
    rec.add("v_dc:R", np.array([9]), v_scale)
    rec.add("i_alpha:R", np.arange(3), i_scale)
    rec.add("v_phi:R", 3 + np.arange(3), v_scale)

    te_l = te.x / (TWO_PI * f1)
    runner = lambda x, t0, rec_buf, rec_idx, n_steps, dt: kn.rk4_direct(
        x, t0, dt, n_steps, rec_buf, rec_idx, f1,
        emf_orders, emf_amp, emf_phase, te.r, te_l, cider_prm)
    return _run_periodic(x, runner, rec, index_set, options, t_start)


def _run_periodic(x, runner, rec, index_set, options, t_start):
    """Integrate period by period until consecutive periods agree."""
    f1 = index_set.f1
    period = 1.0 / f1
    n_pp = int(round(period / options.dt))
    dt = period / n_pp
    n_rec = rec.rec_idx.shape[0]
    rec_idx = rec.rec_idx
    prev = None
    rolling = []
    settled = False
    remaining = -1
    t = 0.0
    periods = 0
    for k in range(options.max_periods):
        buf = np.empty((n_rec, n_pp))
        t = runner(x, t, buf, rec_idx, n_pp, dt)
        periods += 1
        rolling.append(buf)
        if len(rolling) > options.dft_periods:
            rolling.pop(0)
        if settled:
            remaining -= 1
            if remaining == 0:
                break
        elif prev is not None:
            diff = np.max([np.max(np.abs(buf[sl] - prev[sl])) / scale
                           for sl, scale in zip(rec.slices, rec.scales)])
            if not np.isfinite(diff):
                raise FloatingPointError(
                    "time-domain integration diverged (reduce the step size)"
                )
            if diff < options.settle_tol_pu:
                # the waveforms are periodic from here on: collect a clean
                # window of dft_periods periods starting with this one
                settled = True
                remaining = options.dft_periods - 1
                rolling = [buf]
        prev = buf
    history = rolling
    window = np.concatenate(history[-options.dft_periods:], axis=1)
    coeffs = _dft(window, options.dft_periods, index_set)
    # the window ends at t and each sample holds the state at the *end* of
    # its step; rereference the phases to t = 0 modulo the period
    spectra = {}
    shift = np.exp(-1j * TWO_PI * f1 * index_set.orders
                   * ((t - options.dft_periods * period + dt) % period))
    for name, sl in zip(rec.names, rec.slices):
        spectra[name] = coeffs[sl] * shift
    return TdsResult(
        index_set=index_set,
        spectra=spectra,
        periods_run=periods,
        settled=settled,
        runtime_s=time.perf_counter() - t_start,
        jit=kn.HAVE_NUMBA,
    )


# --- comparison metrics ------------------------------------------------------


def kpi_errors(spec_a: np.ndarray, spec_b: np.ndarray, base: float,
               floor_pu: float = 1e-6):
    """Worst-case magnitude and phase discrepancies between two spectra.

    spec_* have shape (channels, n) over the same index set.  Magnitude
    errors are normalized by `base`; phase errors are only evaluated where
    both coefficients exceed `floor_pu` in magnitude.
    """
    mag_a, mag_b = np.abs(spec_a), np.abs(spec_b)
    e_abs = np.max(np.abs(mag_a - mag_b)) / base
    mask = (mag_a > floor_pu * base) & (mag_b > floor_pu * base)
    if not np.any(mask):
        return e_abs, 0.0
    dphi = np.angle(spec_a[mask] / spec_b[mask])
    return e_abs, float(np.max(np.abs(dphi)))


def thd(spec: np.ndarray, index_set: HarmonicIndexSet) -> float:
    """Total harmonic distortion in percent, worst phase."""
    spec = np.atleast_2d(spec)
    i1 = index_set.idx(1)
    fund = np.abs(spec[:, i1])
    rest = 0.0 * fund
    for h in range(2, index_set.h_max + 1):
        rest += np.abs(spec[:, index_set.idx(h)]) ** 2
    return float(np.max(np.sqrt(rest) / fund)) * 100.0
