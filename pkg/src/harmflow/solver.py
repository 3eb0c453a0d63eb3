"""Harmonic power-flow solvers.

The coupled solver runs Newton-Raphson on the hybrid grid equations with
the converter closed-loop responses as resource models; unknowns are the
injected current spectra at grid-forming nodes and the voltage spectra at
grid-following nodes.  The operating points anchoring the converter
linearizations are refreshed from the closed-loop outputs after every
step (their sensitivities are left out of the Jacobian).

The decoupled solver is the classical baseline: a fundamental-only solve
followed by independent linear harmonic injections scaled from
precomputed device spectra.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cider import FollowerCider, TheveninSource, balanced_fundamental
from .harmonic import HarmonicIndexSet, HarmonicSignal
from .network import HarmonicGrid, NetworkSpec


@dataclass
class SolverOptions:
    epsilon_pu: float = 1e-8
    max_iter: int = 50


@dataclass
class HpfResult:
    index_set: HarmonicIndexSet
    forming: list
    following: list
    i_s: np.ndarray  # stacked injected currents at forming nodes
    v_s: np.ndarray  # stacked voltages at forming nodes
    v_r: np.ndarray  # stacked voltages at following nodes
    i_r: np.ndarray  # stacked injected currents at following nodes
    iterations: int
    converged: bool
    residual_history: list
    runtime_s: float

    def node_voltage(self, node: str) -> np.ndarray:
        """Stacked (harmonic-major, 3 phases) voltage spectrum of a node."""
        if node in self.forming:
            return _extract(self.v_s, self.index_set.n, len(self.forming),
                            self.forming.index(node))
        return _extract(self.v_r, self.index_set.n, len(self.following),
                        self.following.index(node))

    def node_current(self, node: str) -> np.ndarray:
        if node in self.forming:
            return _extract(self.i_s, self.index_set.n, len(self.forming),
                            self.forming.index(node))
        return _extract(self.i_r, self.index_set.n, len(self.following),
                        self.following.index(node))


def _extract(vec: np.ndarray, n_h: int, n_nodes: int, j: int) -> np.ndarray:
    return vec.reshape(n_h, n_nodes, 3)[:, j, :].reshape(-1)


def _scatter_indices(n_h: int, n_nodes: int, j: int) -> np.ndarray:
    """Global stacked indices of node j's channels."""
    m = np.arange(n_h)
    return (m[:, None] * 3 * n_nodes + 3 * j + np.arange(3)[None, :]).reshape(-1)


class HpfProblem:
    """Coupled harmonic power flow on one network."""

    def __init__(self, net: NetworkSpec, te_sources: dict, ciders: dict,
                 index_set: HarmonicIndexSet, options: SolverOptions = None):
        if list(te_sources) != net.forming:
            raise ValueError("one Thevenin source per forming node required")
        if sorted(ciders) != sorted(net.following):
            raise ValueError("one converter per following node required")
        self.net = net
        self.index_set = index_set
        self.options = options or SolverOptions()
        self.grid = HarmonicGrid.build(net, index_set)
        self.te_sources = te_sources
        self.ciders = ciders
        self.n_s = len(net.forming)
        self.n_r = len(net.following)

        self.h_ss = self.grid.lifted("h_ss")
        self.h_sr = self.grid.lifted("h_sr")
        self.h_rs = self.grid.lifted("h_rs")
        self.h_rr = self.grid.lifted("h_rr")

        n = index_set.n
        self.v_te = np.zeros(3 * self.n_s * n, dtype=complex)
        self.z_te = np.zeros((3 * self.n_s * n,) * 2, dtype=complex)
        for j, node in enumerate(net.forming):
            te = te_sources[node]
            sel = _scatter_indices(n, self.n_s, j)
            self.v_te[sel] = te.emf_signal(index_set).vector()
            self.z_te[np.ix_(sel, sel)] = te.impedance_lift(index_set)

        # per-unit scales for Fourier coefficients
        self.v_scale = net.v_base_rms / np.sqrt(2.0)
        self.i_scale = net.p_base_w / (3.0 * net.v_base_rms * np.sqrt(2.0))

    # --- state helpers ----------------------------------------------------

    def flat_start(self) -> np.ndarray:
        n = self.index_set.n
        i_s = np.zeros(3 * self.n_s * n, dtype=complex)
        v_nom = balanced_fundamental(self.index_set, np.sqrt(2.0) * self.net.v_base_rms)
        v_r = np.zeros(3 * self.n_r * n, dtype=complex)
        for j in range(self.n_r):
            v_r[_scatter_indices(n, self.n_r, j)] = v_nom.vector()
        return np.concatenate([i_s, v_r])

    def perturbed_start(self, rng: np.random.Generator, magnitude: float = 0.2) -> np.ndarray:
        """Flat start with random symmetrical components added per node."""
        from .network import FORTESCUE

        n = self.index_set.n
        z = self.flat_start()
        n_is = 3 * self.n_s * n
        v_nom_peak = np.sqrt(2.0) * self.net.v_base_rms
        for j in range(self.n_r):
            seq = (magnitude * rng.uniform(0.0, 1.0, 3) * v_nom_peak / 2.0
                   * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, 3)))
            abc = FORTESCUE @ seq
            sel = _scatter_indices(n, self.n_r, j).reshape(n, 3)
            z[n_is + sel[self.index_set.idx(1)]] += abc
            z[n_is + sel[self.index_set.idx(-1)]] += np.conj(abc)
        return z

    def split(self, z: np.ndarray):
        n_is = 3 * self.n_s * self.index_set.n
        return z[:n_is], z[n_is:]

    def project_symmetric(self, z: np.ndarray) -> np.ndarray:
        i_s, v_r = self.split(z)
        n = self.index_set.n

        def proj(vec, n_nodes):
            c = vec.reshape(n, 3 * n_nodes)
            return (0.5 * (c + np.conj(c[::-1]))).reshape(-1)

        return np.concatenate([proj(i_s, self.n_s), proj(v_r, self.n_r)])

    # --- residuals and Jacobian -------------------------------------------

    def resource_currents(self, v_r: np.ndarray) -> np.ndarray:
        n = self.index_set.n
        i_model = np.zeros_like(v_r)
        for j, node in enumerate(self.net.following):
            sel = _scatter_indices(n, self.n_r, j)
            i_model[sel] = self.ciders[node].injected_current(v_r[sel])
        return i_model

    def residuals(self, z: np.ndarray) -> np.ndarray:
        i_s, v_r = self.split(z)
        f_s = self.h_ss @ i_s + self.h_sr @ v_r - (self.v_te - self.z_te @ i_s)
        f_r = self.h_rs @ i_s + self.h_rr @ v_r - self.resource_currents(v_r)
        return np.concatenate([f_s, f_r])

    def residual_norm_pu(self, f: np.ndarray) -> float:
        n_vs = 3 * self.n_s * self.index_set.n
        v_part = np.max(np.abs(f[:n_vs])) / self.v_scale if n_vs else 0.0
        i_part = np.max(np.abs(f[n_vs:])) / self.i_scale if f.size > n_vs else 0.0
        return max(v_part, i_part)

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        _, v_r = self.split(z)
        n = self.index_set.n
        n_is = 3 * self.n_s * n
        n_vr = 3 * self.n_r * n
        jac = np.zeros((n_is + n_vr, n_is + n_vr), dtype=complex)
        jac[:n_is, :n_is] = self.h_ss + self.z_te
        jac[:n_is, n_is:] = self.h_sr
        jac[n_is:, :n_is] = self.h_rs
        jac[n_is:, n_is:] = self.h_rr
        for j, node in enumerate(self.net.following):
            sel = _scatter_indices(n, self.n_r, j)
            dmodel = self.ciders[node].current_jacobian(v_r[sel])
            jac[np.ix_(n_is + sel, n_is + sel)] -= dmodel
        return jac

    # --- main loop ----------------------------------------------------------

    def solve(self, z0: np.ndarray = None) -> HpfResult:
        t_start = time.perf_counter()
        opts = self.options
        z = self.flat_start() if z0 is None else z0.copy()
        for node in self.net.following:
            cd = self.ciders[node]
            cd.op = cd.default_operating_point()
            cd.rebuild()
        history = []
        converged = False
        iterations = 0
        for it in range(1, opts.max_iter + 1):
            iterations = it
            f = self.residuals(z)
            norm = self.residual_norm_pu(f)
            history.append(norm)
            if norm <= opts.epsilon_pu:
                converged = True
                break
            jac = self.jacobian(z)
            z = z - np.linalg.solve(jac, f)
            z = self.project_symmetric(z)
            _, v_r = self.split(z)
            n = self.index_set.n
            for j, node in enumerate(self.net.following):
                sel = _scatter_indices(n, self.n_r, j)
                self.ciders[node].refresh_operating_point(v_r[sel])
        i_s, v_r = self.split(z)
        v_s = self.v_te - self.z_te @ i_s
        i_r = self.resource_currents(v_r)
        return HpfResult(
            index_set=self.index_set,
            forming=list(self.net.forming),
            following=list(self.net.following),
            i_s=i_s, v_s=v_s, v_r=v_r, i_r=i_r,
            iterations=iterations, converged=converged,
            residual_history=history,
            runtime_s=time.perf_counter() - t_start,
        )


def solve_hpf(net, te_sources, ciders, index_set, options=None, z0=None) -> HpfResult:
    return HpfProblem(net, te_sources, ciders, index_set, options).solve(z0)


# --- decoupled baseline -----------------------------------------------------


def compute_alpha_ratios(params, setpoints, te: TheveninSource,
                         index_set: HarmonicIndexSet, with_dc: bool = True,
                         v_base_rms: float = 230.0, p_base_w: float = 50e3) -> np.ndarray:
    """Per-phase spectra of a single converter on a Thevenin source,
    normalized by the same-phase fundamental coefficient (shape (3, n))."""
    from .network import BranchSpec
    from .harmonic import TWO_PI

    net = NetworkSpec(
        nodes=["S", "R"], forming=["S"], following=["R"],
        lines=[BranchSpec("S", "R", te.r, te.x / (TWO_PI * index_set.f1))],
        v_base_rms=v_base_rms, p_base_w=p_base_w, f1=index_set.f1,
    )
    emf_only = TheveninSource(te.v_rms, 1e-9, 1.0, te.harmonics)
    cider = FollowerCider(params, setpoints, index_set, with_dc=with_dc,
                          v_nom_rms=v_base_rms)
    result = solve_hpf(net, {"S": emf_only}, {"R": cider}, index_set)
    if not result.converged:
        raise RuntimeError("ratio computation did not converge")
    spec = result.node_current("R").reshape(index_set.n, 3).T
    i1 = spec[:, index_set.idx(1)]
    ratios = spec / i1[:, None]
    ratios[:, index_set.idx(1)] = 1.0
    ratios[:, index_set.idx(-1)] = 1.0
    return ratios


def solve_dhpf(net, te_sources, ciders, index_set, ratios: dict,
               options=None) -> HpfResult:
    """Decoupled baseline: fundamental power flow plus fixed-ratio harmonic
    current injections solved independently per order.

    ratios maps following node -> (3, n) per-phase spectra normalized by the
    fundamental (see compute_alpha_ratios).
    """
    t_start = time.perf_counter()
    fund = HarmonicIndexSet(index_set.f1, 1)
    fund_ciders = {
        node: FollowerCider(cd.params, cd.setpoints, fund, with_dc=cd.with_dc,
                            v_nom_rms=cd.v_nom_rms)
        for node, cd in ciders.items()
    }
    base = solve_hpf(net, te_sources, fund_ciders, fund, options)

    n = index_set.n
    n_s, n_r = len(net.forming), len(net.following)
    grid = HarmonicGrid.build(net, index_set)
    i_s = np.zeros(3 * n_s * n, dtype=complex)
    v_r = np.zeros(3 * n_r * n, dtype=complex)
    i_r = np.zeros(3 * n_r * n, dtype=complex)
    v_s = np.zeros(3 * n_s * n, dtype=complex)

    # fundamental (and DC) from the base solve
    for h in (-1, 0, 1):
        mi, mf = index_set.idx(h), fund.idx(h)
        i_s.reshape(n, 3 * n_s)[mi] = base.i_s.reshape(fund.n, 3 * n_s)[mf]
        v_s.reshape(n, 3 * n_s)[mi] = base.v_s.reshape(fund.n, 3 * n_s)[mf]
        v_r.reshape(n, 3 * n_r)[mi] = base.v_r.reshape(fund.n, 3 * n_r)[mf]
        i_r.reshape(n, 3 * n_r)[mi] = base.i_r.reshape(fund.n, 3 * n_r)[mf]

    # independent linear solves above the fundamental
    for h in index_set.orders:
        if abs(h) <= 1:
            continue
        hb = grid.hybrids[h]
        inj = np.zeros(3 * n_r, dtype=complex)
        for j, node in enumerate(net.following):
            i1 = base.node_current(node).reshape(fund.n, 3)[fund.idx(1)]
            if h > 0:
                inj[3 * j : 3 * j + 3] = ratios[node][:, index_set.idx(h)] * i1
            else:
                inj[3 * j : 3 * j + 3] = np.conj(
                    ratios[node][:, index_set.idx(-h)] * i1
                )
        v_te_h = np.zeros(3 * n_s, dtype=complex)
        z_h = np.zeros((3 * n_s, 3 * n_s), dtype=complex)
        for j, node in enumerate(net.forming):
            te = te_sources[node]
            emf = te.emf_signal(index_set)
            v_te_h[3 * j : 3 * j + 3] = emf.coeffs[:, index_set.idx(h)]
            z_h[3 * j : 3 * j + 3, 3 * j : 3 * j + 3] = (
                te.r + 1j * h * te.x
            ) * np.eye(3)
        top = np.hstack([hb.h_ss + z_h, hb.h_sr])
        bot = np.hstack([hb.h_rs, hb.h_rr])
        sol = np.linalg.solve(np.vstack([top, bot]),
                              np.concatenate([v_te_h, inj]))
        mi = index_set.idx(h)
        i_s.reshape(n, 3 * n_s)[mi] = sol[: 3 * n_s]
        v_r.reshape(n, 3 * n_r)[mi] = sol[3 * n_s :]
        i_r.reshape(n, 3 * n_r)[mi] = inj
        v_s.reshape(n, 3 * n_s)[mi] = v_te_h - z_h @ sol[: 3 * n_s]

    return HpfResult(
        index_set=index_set,
        forming=list(net.forming), following=list(net.following),
        i_s=i_s, v_s=v_s, v_r=v_r, i_r=i_r,
        iterations=base.iterations, converged=base.converged,
        residual_history=base.residual_history,
        runtime_s=time.perf_counter() - t_start,
    )
