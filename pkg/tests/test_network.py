import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harmflow.harmonic import TWO_PI, HarmonicIndexSet
from harmflow.network import (
    BranchSpec,
    HarmonicGrid,
    LineSpec,
    LineType,
    LoadSpec,
    NetworkSpec,
    assemble_admittance,
    hybrid_from_admittance,
    kron_reduce,
    sequence_to_phase,
)

UG1 = LineType(r1=0.162, r0=0.529, l1=0.262e-3, l0=1.185e-3, c1=0.637e-6, c0=0.388e-6)
UG3 = LineType(r1=0.822, r0=1.794, l1=0.270e-3, l0=3.895e-3, c1=0.637e-6, c0=0.388e-6)


def small_net():
    return NetworkSpec(
        nodes=["N1", "N2", "N3"],
        forming=["N1"],
        following=["N3"],
        lines=[
            LineSpec("N1", "N2", 35.0, UG1),
            LineSpec("N2", "N3", 30.0, UG3),
        ],
        loads=[LoadSpec("N2", 20e3, 0.95, (0.2, 0.5, 0.3))],
    )


def test_sequence_to_phase_symmetric_when_pos_eq_neg():
    m = sequence_to_phase(0.529, 0.162)
    assert np.allclose(m, m.T)
    assert np.max(np.abs(np.imag(m))) < 1e-12
    # diagonal (z0 + 2 z1)/3, off-diagonal (z0 - z1)/3
    assert m[0, 0] == pytest.approx((0.529 + 2 * 0.162) / 3)
    assert m[0, 1] == pytest.approx((0.529 - 0.162) / 3)


def test_line_eigenvalues_match_sequence_values():
    """Positive-sequence eigenvalue of a 35 m UG1 block at 50 Hz."""
    ln = LineSpec("N1", "N2", 35.0, UG1)
    r, l = ln.series_rl()
    z = r + 1j * TWO_PI * 50.0 * l
    eig = np.linalg.eigvals(z)
    expect = (0.162 + 1j * TWO_PI * 50.0 * 0.262e-3) * 0.035
    assert np.min(np.abs(eig - expect)) < 1e-12
    expect0 = (0.529 + 1j * TWO_PI * 50.0 * 1.185e-3) * 0.035
    assert np.min(np.abs(eig - expect0)) < 1e-12


def test_load_sizing_fundamental_power():
    ld = LoadSpec("N2", 20e3, 0.95, (0.2, 0.5, 0.3))
    r, l = ld.branch_rl(230.0, 50.0)
    z = r + 1j * TWO_PI * 50.0 * l
    s = 3 * [None]
    for p in range(3):
        i = 230.0 / z[p]
        s[p] = 230.0 * np.conj(i)
    s = np.array(s)
    assert np.allclose(np.real(s), 20e3 * np.array([0.2, 0.5, 0.3]) * 0.95 / 0.95)
    assert np.allclose(np.real(s) / np.abs(s), 0.95)
    # load power splits by the weights
    assert np.real(s).sum() == pytest.approx(20e3)


def test_load_reactance_scales_linearly():
    ld = LoadSpec("N2", 20e3, 0.95)
    y1 = ld.admittance(230.0, 50.0, 50.0)[0, 0]
    y3 = ld.admittance(230.0, 50.0, 150.0)[0, 0]
    z1, z3 = 1 / y1, 1 / y3
    assert np.real(z3) == pytest.approx(np.real(z1))
    assert np.imag(z3) == pytest.approx(3 * np.imag(z1))


def test_admittance_negative_frequency_is_conjugate():
    net = small_net()
    y_pos = assemble_admittance(net, 250.0)
    y_neg = assemble_admittance(net, -250.0)
    assert np.allclose(y_neg, np.conj(y_pos))


def test_admittance_dc_is_real():
    y0 = assemble_admittance(small_net(), 0.0)
    assert np.max(np.abs(np.imag(y0))) < 1e-12


def test_admittance_row_sums_are_shunts():
    """Without shunts, rows sum to zero; with them, to total shunt admittance."""
    net = NetworkSpec(
        nodes=["N1", "N2"],
        forming=["N1"],
        following=["N2"],
        lines=[BranchSpec("N1", "N2", 0.1, 1e-4)],
    )
    y = assemble_admittance(net, 150.0)
    assert np.max(np.abs(y.sum(axis=1))) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kron_reduction_matches_direct_solve(seed):
    """Reduced system reproduces kept-node voltages of the full solve."""
    rng = np.random.default_rng(seed)
    net = small_net()
    f = rng.uniform(25.0, 1250.0)
    y = assemble_admittance(net, f)
    keep = np.array([0, 1, 2, 6, 7, 8])
    y_red, recover = kron_reduce(y, keep)
    i_full = np.zeros(9, dtype=complex)
    inj = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    i_full[keep] = inj
    v_full = np.linalg.solve(y, i_full)
    v_red = np.linalg.solve(y_red, inj)
    scale = np.max(np.abs(v_full))
    assert np.max(np.abs(v_red - v_full[keep])) / scale < 1e-12
    assert np.max(np.abs(recover @ v_red - v_full[[3, 4, 5]])) / scale < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_hybrid_round_trip(seed):
    """Hybrid blocks invert the admittance relation exactly."""
    rng = np.random.default_rng(seed)
    net = small_net()
    y = assemble_admittance(net, 350.0)
    keep = np.array([0, 1, 2, 6, 7, 8])
    y_red, _ = kron_reduce(y, keep)
    hb = hybrid_from_admittance(y_red, 3)
    i_s = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v_r = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v_s = hb.h_ss @ i_s + hb.h_sr @ v_r
    i_r = hb.h_rs @ i_s + hb.h_rr @ v_r
    # forward through Y must reproduce the injections
    v = np.concatenate([v_s, v_r])
    i = y_red @ v
    assert np.max(np.abs(i[:3] - i_s)) < 1e-10
    assert np.max(np.abs(i[3:] - i_r)) < 1e-10


def test_two_node_series_branch_hybrid():
    """For a single series branch, h_ss is the branch impedance."""
    z = 0.195 * np.exp(1j * np.arctan2(1.0, 6.207))
    r = np.real(z)
    l = np.imag(z) / (TWO_PI * 50.0)
    net = NetworkSpec(
        nodes=["N1", "N2"],
        forming=["N1"],
        following=["N2"],
        lines=[BranchSpec("N1", "N2", r, l)],
    )
    y = assemble_admittance(net, 50.0)
    hb = hybrid_from_admittance(y, 3)
    assert np.allclose(np.diag(hb.h_ss), z)
    assert np.allclose(hb.h_sr, np.eye(3))
    assert np.allclose(hb.h_rs, -np.eye(3))
    # unit fundamental current into the source node drops |z| volts
    assert np.abs(hb.h_ss[0, 0]) == pytest.approx(0.195)


def test_harmonic_grid_build_and_lift():
    idx = HarmonicIndexSet(50.0, 2)
    grid = HarmonicGrid.build(small_net(), idx)
    assert set(grid.hybrids) == {-2, -1, 0, 1, 2}
    lift = grid.lifted("h_rr")
    assert lift.shape == (15, 15)
    assert np.allclose(lift[6:9, 6:9], grid.hybrids[0].h_rr)
    assert np.allclose(grid.hybrids[-1].h_rr, np.conj(grid.hybrids[1].h_rr))


def test_network_spec_validation():
    with pytest.raises(ValueError, match="unknown node"):
        NetworkSpec(nodes=["N1"], forming=["N1"], following=["N9"], lines=[])
    with pytest.raises(ValueError, match="both"):
        NetworkSpec(nodes=["N1"], forming=["N1"], following=["N1"], lines=[])
    with pytest.raises(ValueError, match="weights"):
        LoadSpec("N1", 1e3, 0.95, (0.5, 0.6, 0.2)).branch_rl(230.0, 50.0)
