import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from harmflow.harmonic import HarmonicIndexSet
from harmflow.scenario import bundled_scenario
from harmflow.tds import (
    TdsOptions,
    _dft,
    kpi_errors,
    simulate_direct,
    thd,
)

IDX = HarmonicIndexSet(50.0, 8)


# --- spectrum extraction -----------------------------------------------------

def test_dft_pure_cosine():
    n_periods, n_per = 5, 512
    t = np.arange(n_periods * n_per) / (n_per * 50.0)
    x = np.cos(2 * np.pi * 50.0 * t)[None, :]
    spec = _dft(x, n_periods, IDX)
    assert spec[0, IDX.idx(1)] == pytest.approx(0.5, abs=1e-12)
    assert spec[0, IDX.idx(-1)] == pytest.approx(0.5, abs=1e-12)
    mask = np.ones(IDX.n, dtype=bool)
    mask[[IDX.idx(1), IDX.idx(-1)]] = False
    assert np.max(np.abs(spec[0, mask])) < 1e-12


def test_dft_dc_constant():
    x = np.full((1, 5 * 256), 3.7)
    spec = _dft(x, 5, IDX)
    assert spec[0, IDX.idx(0)] == pytest.approx(3.7, abs=1e-12)


def test_dft_two_tone_closed_form():
    n_periods, n_per = 5, 1024
    t = np.arange(n_periods * n_per) / (n_per * 50.0)
    x = (0.8 * np.cos(2 * np.pi * 150.0 * t + 0.3)
         + 0.2 * np.sin(2 * np.pi * 350.0 * t))[None, :]
    spec = _dft(x, n_periods, IDX)
    assert abs(spec[0, IDX.idx(3)] - 0.4 * np.exp(0.3j)) < 1e-10
    assert abs(spec[0, IDX.idx(7)] - 0.1 * np.exp(-0.5j * np.pi)) < 1e-10
    assert abs(spec[0, IDX.idx(-7)] - 0.1 * np.exp(0.5j * np.pi)) < 1e-10


# --- KPI helpers -------------------------------------------------------------

def test_kpi_identical_spectra_zero():
    rng = np.random.default_rng(0)
    spec = rng.normal(size=(3, IDX.n)) + 1j * rng.normal(size=(3, IDX.n))
    e_abs, e_arg = kpi_errors(spec, spec.copy(), 1.0)
    assert e_abs == 0.0 and e_arg < 1e-12


def test_kpi_phase_floor():
    a = np.array([[1e-9 + 0j, 1.0 + 0j]])
    b = np.array([[1e-9j, 1.0 + 0j]])
    # the 90-degree disagreement sits below the floor and must not count
    _, e_arg = kpi_errors(a, b, 1.0, floor_pu=1e-6)
    assert e_arg == 0.0


def test_thd_known_value():
    spec = np.zeros((1, IDX.n), dtype=complex)
    spec[0, IDX.idx(1)] = 1.0
    spec[0, IDX.idx(-1)] = 1.0
    spec[0, IDX.idx(5)] = 0.03
    spec[0, IDX.idx(-5)] = 0.03
    spec[0, IDX.idx(7)] = 0.04
    spec[0, IDX.idx(-7)] = 0.04
    assert thd(spec, IDX) == pytest.approx(5.0, rel=1e-12)


# --- reference simulation ----------------------------------------------------

@pytest.fixture(scope="module")
def direct_run():
    scen = bundled_scenario("single_cider_te")
    cd = scen.build_ciders(IDX)["R"]
    opts = TdsOptions(dt=2e-6, max_periods=40, settle_tol_pu=1e-7)
    res = simulate_direct(scen.thevenin, cd, IDX, opts)
    assert res.settled
    return scen, res


def test_direct_run_tracks_setpoints(direct_run):
    scen, res = direct_run
    v_dc = res.get("v_dc:R")  # spectra are recorded in natural units
    assert v_dc[0, IDX.idx(0)].real == pytest.approx(900.0, rel=1e-6)
    # fundamental grid current carries the apparent-power setpoint (up to
    # the voltage drop across the source impedance)
    i1 = res.get("i:R")[:, IDX.idx(1)]
    s_rated = np.hypot(50e3, 16.4e3)
    i_expect = s_rated / (3.0 * scen.v_base_rms) * np.sqrt(2.0)
    assert np.abs(i1[0]) * 2.0 == pytest.approx(i_expect, rel=0.10)


def test_dc_link_even_harmonics_only(direct_run):
    scen, res = direct_run
    v_dc = res.get("v_dc:R")[0]
    odd = max(abs(v_dc[IDX.idx(h)]) for h in range(1, IDX.h_max + 1, 2))
    even = max(abs(v_dc[IDX.idx(h)]) for h in range(2, IDX.h_max + 1, 2))
    assert odd < 1e-9
    assert even > 1e-6  # the coupling itself is present


def test_conjugate_symmetry_of_spectra(direct_run):
    scen, res = direct_run
    for name in ("i:R", "v_dc:R", "v_phi:R"):
        spec = res.get(name)
        assert np.max(np.abs(spec - np.conj(spec[:, ::-1]))) < 1e-9


def test_step_halving_spectral_drift():
    scen = bundled_scenario("single_cider_te")
    idx = HarmonicIndexSet(50.0, 8)
    specs = []
    for dt in (4e-6, 2e-6):
        cd = scen.build_ciders(idx)["R"]
        opts = TdsOptions(dt=dt, max_periods=60, settle_tol_pu=1e-10)
        res = simulate_direct(scen.thevenin, cd, idx, opts)
        assert res.settled
        specs.append(res.get("i:R"))
    i_b = scen.p_base_w / (3.0 * scen.v_base_rms * np.sqrt(2.0))
    drift = np.max(np.abs(specs[0] - specs[1])) / i_b
    assert drift < 1e-8


def test_fallback_kernel_matches_jit():
    # run the same short simulation in a subprocess with the JIT disabled
    code = (
        "import numpy as np\n"
        "from harmflow.harmonic import HarmonicIndexSet\n"
        "from harmflow.scenario import bundled_scenario\n"
        "from harmflow.tds import TdsOptions, simulate_direct\n"
        "from harmflow import _kernels\n"
        "assert _kernels.NUMBA_DISABLED\n"
        "idx = HarmonicIndexSet(50.0, 5)\n"
        "scen = bundled_scenario('single_cider_te')\n"
        "cd = scen.build_ciders(idx)['R']\n"
        "res = simulate_direct(scen.thevenin, cd, idx,\n"
        "                      TdsOptions(dt=5e-6, max_periods=8,\n"
        "                                 settle_tol_pu=0.0))\n"
        "np.save('fallback.npy', res.get('i:R'))\n"
    )
    env = dict(os.environ, HARMFLOW_NO_NUMBA="1")
    subprocess.run([sys.executable, "-c", code], check=True, env=env)

    idx = HarmonicIndexSet(50.0, 5)
    scen = bundled_scenario("single_cider_te")
    cd = scen.build_ciders(idx)["R"]
    res = simulate_direct(scen.thevenin, cd, idx,
                          TdsOptions(dt=5e-6, max_periods=8,
                                     settle_tol_pu=0.0))
    other = np.load("fallback.npy")
    assert np.max(np.abs(res.get("i:R") - other)) < 1e-12
    os.remove("fallback.npy")
