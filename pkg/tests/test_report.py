import csv
import json

import numpy as np
import pytest

from harmflow import report
from harmflow.harmonic import HarmonicIndexSet
from harmflow.scenario import bundled_scenario
from harmflow.solver import solve_hpf

IDX = HarmonicIndexSet(50.0, 8)


@pytest.fixture(scope="module")
def solved():
    scen = bundled_scenario("single_cider_te")
    net = scen.network()
    res = solve_hpf(net, scen.forming_sources(), scen.build_ciders(IDX), IDX)
    assert res.converged
    return scen, net, res


@pytest.fixture(scope="module")
def spectra(solved):
    scen, net, res = solved
    return report.hpf_spectra(res, net, IDX)


def test_spectra_contains_all_nodes(spectra, solved):
    scen, net, res = solved
    for node in net.nodes:
        assert f"v:{node}" in spectra
    for node in net.forming + net.following:
        assert f"i:{node}" in spectra
    for name, spec in spectra.items():
        assert spec.shape == (3, IDX.n)


def test_spectra_json_round_trip(spectra, tmp_path):
    path = tmp_path / "spectra.json"
    report.write_spectra_json(spectra, IDX, path)
    doc = json.loads(path.read_text())
    assert doc["f1"] == 50.0 and doc["h_max"] == 8
    name = sorted(spectra)[0]
    spec = spectra[name]
    for k, h in enumerate(IDX.orders):
        re, im = doc["spectra"][name]["a"][str(h)]
        assert complex(re, im) == pytest.approx(spec[0, k], abs=1e-12)


def test_thd_csv(spectra, tmp_path):
    path = tmp_path / "thd.csv"
    report.write_thd_csv(spectra, IDX, path)
    rows = list(csv.DictReader(path.open()))
    names = {(r["quantity"], r["node"]) for r in rows}
    assert ("v", "R") in names
    by = {(r["quantity"], r["node"]): float(r["thd_max_percent"])
          for r in rows}
    assert 0.0 < by[("v", "R")] < 100.0


def test_waveforms_reconstruct_fundamental(spectra, tmp_path, solved):
    scen, net, res = solved
    path = tmp_path / "wav.csv"
    report.write_waveforms_csv(spectra, IDX, path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 400
    col = "v:R:a"
    samples = np.array([float(r[col]) for r in rows])
    # the harmonic-rich crest exceeds the nominal peak, but the RMS value
    # stays close to the nominal phase voltage
    rms = np.sqrt(np.mean(samples**2))
    # the injected current raises the terminal voltage above the source EMF
    assert rms == pytest.approx(230.0, rel=0.10)


def test_kpi_csv(spectra, tmp_path):
    path = tmp_path / "kpi.csv"
    report.write_kpi_csv(spectra, spectra, IDX, path,
                         v_base=np.sqrt(2.0) * 230.0,
                         i_base=50e3 / (3 * 230 * np.sqrt(2.0)))
    rows = list(csv.DictReader(path.open()))
    assert rows
    for r in rows:
        assert float(r["e_abs_pu"]) == 0.0


def test_comparison_report(spectra, tmp_path):
    other = {k: v * (1.0 + 0.01) for k, v in spectra.items()}
    path = tmp_path / "cmp.csv"
    diffs = report.write_comparison_report(
        spectra, other, IDX, path, "a", "b",
        v_base=np.sqrt(2.0) * 230.0,
        i_base=50e3 / (3 * 230 * np.sqrt(2.0)))
    assert path.exists()
    assert any(d > 0 for per_h in diffs.values() for d in per_h.values())


def test_plot_spectra(spectra, tmp_path):
    path = tmp_path / "plot.svg"
    report.plot_spectra(spectra, IDX, path, names=sorted(spectra)[:2],
                        v_base=np.sqrt(2.0) * 230.0,
                        i_base=50e3 / (3 * 230 * np.sqrt(2.0)))
    assert path.stat().st_size > 1000
