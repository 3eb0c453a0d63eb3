"""Three-phase network model in the harmonic domain.

Lines are pi-sections built from sequence parameters (per-km), loads are
constant series R-L branches sized at the fundamental, and the compound
nodal admittance matrix is evaluated independently at every harmonic
frequency.  Nodes without sources are eliminated by Kron reduction and the
reduced system is rearranged into hybrid form: voltages at grid-forming
nodes and currents at grid-following nodes act as inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .harmonic import TWO_PI, HarmonicIndexSet

_A = np.exp(2j * np.pi / 3.0)
# Fortescue transform, columns ordered (zero, positive, negative)
FORTESCUE = np.array(
    [[1, 1, 1], [1, _A**2, _A], [1, _A, _A**2]], dtype=complex
)
FORTESCUE_INV = np.linalg.inv(FORTESCUE)


def sequence_to_phase(zero, positive, negative=None) -> np.ndarray:
    """Phase-frame 3x3 matrix from sequence values (scalar per sequence)."""
    if negative is None:
        negative = positive
    return FORTESCUE @ np.diag([zero, positive, negative]).astype(complex) @ FORTESCUE_INV


@dataclass(frozen=True)
class LineType:
    """Per-km sequence parameters of a line or cable."""

    r1: float  # ohm/km
    r0: float
    l1: float  # H/km
    l0: float
    c1: float  # F/km
    c0: float


@dataclass(frozen=True)
class LineSpec:
    from_node: str
    to_node: str
    length_m: float
    kind: LineType

    def series_rl(self):
        """Total phase-frame series resistance and inductance (real 3x3)."""
        km = self.length_m / 1000.0
        r = sequence_to_phase(self.kind.r0, self.kind.r1) * km
        l = sequence_to_phase(self.kind.l0, self.kind.l1) * km
        return np.real(r), np.real(l)

    def shunt_c_end(self):
        """Phase-frame capacitance of one pi-section end (real 3x3)."""
        km = self.length_m / 1000.0
        return np.real(sequence_to_phase(self.kind.c0, self.kind.c1)) * km / 2.0


@dataclass(frozen=True)
class BranchSpec:
    """Explicit series R-L branch (no shunt), identical per phase."""

    from_node: str
    to_node: str
    r: float  # ohm
    l: float  # H

    def series_rl(self):
        return np.eye(3) * self.r, np.eye(3) * self.l

    def shunt_c_end(self):
        return np.zeros((3, 3))


@dataclass(frozen=True)
class LoadSpec:
    """Wye-connected series R-L load, sized from power at the fundamental.

    power_w is the consumed active power (positive consumption), split over
    phases by weights; reactance scales linearly with frequency.
    """

    node: str
    power_w: float
    power_factor: float
    weights: tuple = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)

    def branch_rl(self, v_phase_rms: float, f1: float):
        """Per-phase (R, L) arrays."""
        w = np.asarray(self.weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-6 or np.any(w <= 0):
            raise ValueError("load weights must be positive and sum to 1")
        s_phase = abs(self.power_w) / self.power_factor * w
        z_mag = v_phase_rms**2 / s_phase
        phi = np.arccos(self.power_factor)
        r = z_mag * self.power_factor
        x = z_mag * np.sin(phi)
        return r, x / (TWO_PI * f1)

    def admittance(self, v_phase_rms: float, f1: float, f: float) -> np.ndarray:
        r, l = self.branch_rl(v_phase_rms, f1)
        return np.diag(1.0 / (r + 1j * TWO_PI * f * l))


@dataclass
class NetworkSpec:
    nodes: list
    forming: list
    following: list
    lines: list  # LineSpec | BranchSpec
    loads: list = field(default_factory=list)
    v_base_rms: float = 230.0
    p_base_w: float = 50e3
    f1: float = 50.0

    def __post_init__(self):
        known = set(self.nodes)
        for n in self.forming + self.following + [ld.node for ld in self.loads]:
            if n not in known:
                raise ValueError(f"unknown node {n}")
        for ln in self.lines:
            if ln.from_node not in known or ln.to_node not in known:
                raise ValueError(f"line references unknown node {ln}")
        if set(self.forming) & set(self.following):
            raise ValueError("a node cannot be both forming and following")

    def node_index(self, name: str) -> int:
        return self.nodes.index(name)

    @property
    def source_nodes(self) -> list:
        return self.forming + self.following

    @property
    def eliminated_nodes(self) -> list:
        keep = set(self.source_nodes)
        return [n for n in self.nodes if n not in keep]


def assemble_admittance(net: NetworkSpec, f: float) -> np.ndarray:
    """Compound nodal admittance (3N x 3N) at frequency f, loads folded in."""
    n = len(net.nodes)
    y = np.zeros((3 * n, 3 * n), dtype=complex)

    def blk(i):
        return slice(3 * i, 3 * i + 3)

    for ln in net.lines:
        i, j = net.node_index(ln.from_node), net.node_index(ln.to_node)
        r, l = ln.series_rl()
        ys = np.linalg.inv(r + 1j * TWO_PI * f * l)
        ysh = 1j * TWO_PI * f * ln.shunt_c_end()
        y[blk(i), blk(i)] += ys + ysh
        y[blk(j), blk(j)] += ys + ysh
        y[blk(i), blk(j)] -= ys
        y[blk(j), blk(i)] -= ys
    for ld in net.loads:
        i = net.node_index(ld.node)
        y[blk(i), blk(i)] += ld.admittance(net.v_base_rms, net.f1, f)
    return y


def kron_reduce(y: np.ndarray, keep: np.ndarray):
    """Eliminate zero-injection nodes by the Schur complement.

    Returns the reduced matrix over `keep` and a recovery matrix R with
    v_eliminated = R @ v_keep.
    """
    keep = np.asarray(keep)
    n = y.shape[0]
    drop = np.setdiff1d(np.arange(n), keep)
    if drop.size == 0:
        return y[np.ix_(keep, keep)], np.zeros((0, keep.size), dtype=complex)
    y_kk = y[np.ix_(keep, keep)]
    y_kd = y[np.ix_(keep, drop)]
    y_dk = y[np.ix_(drop, keep)]
    y_dd = y[np.ix_(drop, drop)]
    recover = -np.linalg.solve(y_dd, y_dk)
    return y_kk + y_kd @ recover, recover


@dataclass
class HybridBlocks:
    """Hybrid input-output form of the reduced grid at one frequency.

    With s the forming nodes (current injections unknown) and r the
    following nodes (voltages unknown):
        v_s = h_ss i_s + h_sr v_r
        i_r = h_rs i_s + h_rr v_r
    """

    h_ss: np.ndarray
    h_sr: np.ndarray
    h_rs: np.ndarray
    h_rr: np.ndarray


def hybrid_from_admittance(y: np.ndarray, n_s: int) -> HybridBlocks:
    """Hybrid blocks from a reduced admittance ordered [forming, following]."""
    y_ss = y[:n_s, :n_s]
    y_sr = y[:n_s, n_s:]
    y_rs = y[n_s:, :n_s]
    y_rr = y[n_s:, n_s:]
    h_ss = np.linalg.inv(y_ss)
    return HybridBlocks(
        h_ss=h_ss,
        h_sr=-h_ss @ y_sr,
        h_rs=y_rs @ h_ss,
        h_rr=y_rr - y_rs @ h_ss @ y_sr,
    )


@dataclass
class HarmonicGrid:
    """Per-harmonic hybrid description of a network over an index set."""

    net: NetworkSpec
    index_set: HarmonicIndexSet
    hybrids: dict = field(default_factory=dict)  # h -> HybridBlocks
    recovery: dict = field(default_factory=dict)  # h -> (reduced->eliminated)

    @classmethod
    def build(cls, net: NetworkSpec, index_set: HarmonicIndexSet) -> "HarmonicGrid":
        grid = cls(net, index_set)
        keep_nodes = net.source_nodes
        keep = np.concatenate(
            [3 * net.node_index(n) + np.arange(3) for n in keep_nodes]
        )
        n_s = 3 * len(net.forming)
        for h in index_set.orders:
            y = assemble_admittance(net, h * index_set.f1)
            y_red, recover = kron_reduce(y, keep)
            grid.hybrids[h] = hybrid_from_admittance(y_red, n_s)
            grid.recovery[h] = recover
        return grid

    def lifted(self, name: str) -> np.ndarray:
        """Block-diagonal lift of one hybrid block over all orders."""
        blocks = [getattr(self.hybrids[h], name) for h in self.index_set.orders]
        p, q = blocks[0].shape
        n = self.index_set.n
        out = np.zeros((n * p, n * q), dtype=complex)
        for m, b in enumerate(blocks):
            out[m * p : (m + 1) * p, m * q : (m + 1) * q] = b
        return out

    def recover_eliminated(self, h: int, v_keep: np.ndarray) -> np.ndarray:
        """Voltages at eliminated nodes given kept-node voltages at order h."""
        return self.recovery[h] @ v_keep
