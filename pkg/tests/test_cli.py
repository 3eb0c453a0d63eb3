import json

import pytest

from harmflow.cli import main


def test_run_hpf_direct(tmp_path, capsys):
    rc = main(["run", "hpf", "single_cider_te", "--h-max", "8",
               "--guard", "8", "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "converged=True" in out
    for name in ("hpf_spectra.json", "hpf_thd.csv", "hpf_waveforms.csv",
                 "hpf_spectra.svg"):
        assert (tmp_path / name).exists()


def test_run_tds_direct(tmp_path, capsys):
    rc = main(["run", "tds", "single_cider_te", "--h-max", "5",
               "--out", str(tmp_path), "--dt", "4e-6",
               "--max-periods", "40", "--settle-tol", "1e-6"])
    assert rc == 0
    assert "settled=True" in capsys.readouterr().out
    assert (tmp_path / "tds_spectra.json").exists()


def test_ratios(tmp_path, capsys):
    rc = main(["ratios", "single_cider_te", "--h-max", "8", "--guard", "0",
               "--out", str(tmp_path)])
    assert rc == 0
    doc = json.loads((tmp_path / "ratios.json").read_text())
    assert doc["1"] == pytest.approx(1.0)
    assert doc["5"] > 0.0


def test_scenario_file_path(tmp_path):
    from harmflow.scenario import bundled_scenario, dump_scenario
    path = tmp_path / "case.json"
    dump_scenario(bundled_scenario("single_cider_te"), path)
    rc = main(["run", "hpf", str(path), "--h-max", "5", "--guard", "5",
               "--out", str(tmp_path / "out")])
    assert rc == 0


def test_unknown_scenario_is_an_error(capsys):
    rc = main(["run", "hpf", "nope"])
    assert rc == 2
    assert "error" in capsys.readouterr().err
