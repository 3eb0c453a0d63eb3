"""Result reporting: spectra exports, THD tables, waveforms and plots.

All exports work on plain ``{name: (channels, n) complex array}`` spectrum
maps so that harmonic power-flow results, time-domain results and their
comparisons share one code path.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .harmonic import HarmonicIndexSet, HarmonicSignal, restrict_band
from .network import HarmonicGrid, NetworkSpec
from .solver import HpfResult
from .tds import TdsResult, kpi_errors, thd

_PHASE_NAMES = ("a", "b", "c")


def hpf_spectra(res: HpfResult, net: NetworkSpec,
                out_set: HarmonicIndexSet = None) -> dict:
    """Voltage/current spectrum map from a solved harmonic power flow.

    Voltages of internally eliminated nodes are recovered from the grid
    model, and load currents are reconstructed from them, so the report
    covers every node of the original network.
    """
    src = res.index_set
    out = out_set or src
    spectra = {}
    for nd in net.source_nodes:
        spectra[f"v:{nd}"] = restrict_band(
            res.node_voltage(nd).reshape(-1, 3).T, src, out)
        spectra[f"i:{nd}"] = restrict_band(
            res.node_current(nd).reshape(-1, 3).T, src, out)
    elim = net.eliminated_nodes
    if elim:
        grid = HarmonicGrid.build(net, src)
        v_elim = {}
        for h in src.orders:
            v_keep = np.concatenate([
                res.node_voltage(nd).reshape(-1, 3)[src.idx(h)]
                for nd in net.source_nodes
            ])
            v_elim[h] = grid.recover_eliminated(h, v_keep)
        for j, nd in enumerate(elim):
            spec = np.array([
                [v_elim[h][3 * j + p] for h in src.orders] for p in range(3)
            ])
            spectra[f"v:{nd}"] = restrict_band(spec, src, out)
        for ld in net.loads:
            if ld.node not in elim:
                continue
            j = elim.index(ld.node)
            vspec = np.array([
                [v_elim[h][3 * j + p] for h in src.orders] for p in range(3)
            ])
            ispec = np.empty_like(vspec)
            for k, h in enumerate(src.orders):
                # signed frequency keeps the conjugate symmetry of R + jwL
                y = ld.admittance(net.v_base_rms, net.f1, h * net.f1)
                ispec[:, k] = y @ vspec[:, k]
            spectra[f"i_load:{ld.node}"] = restrict_band(ispec, src, out)
    return spectra


def tds_spectra(res: TdsResult) -> dict:
    return dict(res.spectra)


def write_spectra_json(spectra: dict, index_set: HarmonicIndexSet, path):
    """Spectra as JSON: {name: {phase: {h: [re, im]}}}."""
    doc = {"f1": index_set.f1, "h_max": index_set.h_max, "spectra": {}}
    for name, spec in spectra.items():
        spec = np.atleast_2d(spec)
        chans = {}
        for p in range(spec.shape[0]):
            label = _PHASE_NAMES[p] if spec.shape[0] == 3 else "dc"
            chans[label] = {
                str(h): [float(spec[p, index_set.idx(h)].real),
                         float(spec[p, index_set.idx(h)].imag)]
                for h in index_set.orders
            }
        doc["spectra"][name] = chans
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def write_thd_csv(spectra: dict, index_set: HarmonicIndexSet, path):
    """Worst-phase THD per reported quantity."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "node", "thd_max_percent"])
        for name in sorted(spectra):
            kind, node = name.split(":", 1)
            w.writerow([kind, node, f"{thd(spectra[name], index_set):.4f}"])


def write_waveforms_csv(spectra: dict, index_set: HarmonicIndexSet, path,
                        samples: int = 400):
    """One fundamental period of the reconstructed time-domain waveforms."""
    t = np.arange(samples) / (samples * index_set.f1)
    names = sorted(spectra)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["t_s"]
        cols = []
        for name in names:
            spec = np.atleast_2d(spectra[name])
            sig = HarmonicSignal(index_set, spec).sample(t).real
            for p in range(spec.shape[0]):
                label = _PHASE_NAMES[p] if spec.shape[0] == 3 else "dc"
                header.append(f"{name}:{label}")
                cols.append(sig[p])
        w.writerow(header)
        for k in range(samples):
            w.writerow([f"{t[k]:.8f}"] + [f"{c[k]:.6f}" for c in cols])


def write_kpi_csv(spectra_a: dict, spectra_b: dict,
                  index_set: HarmonicIndexSet, path,
                  v_base: float, i_base: float):
    """Magnitude/angle error KPIs between two spectrum maps (a vs b)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "node", "e_abs_pu", "e_arg_mrad"])
        for name in sorted(set(spectra_a) & set(spectra_b)):
            base = v_base if name.startswith("v") else i_base
            ea, eg = kpi_errors(spectra_a[name] / base,
                                spectra_b[name] / base, 1.0)
            kind, node = name.split(":", 1)
            w.writerow([kind, node, f"{ea:.6e}", f"{eg * 1e3:.4f}"])


def write_comparison_report(spectra_a: dict, spectra_b: dict,
                            index_set: HarmonicIndexSet, path,
                            label_a: str, label_b: str,
                            v_base: float, i_base: float,
                            floor_pu: float = 1e-6) -> dict:
    """Per-harmonic comparison of two solutions (e.g. coupled vs decoupled).

    Returns {name: {h: max-abs-difference in p.u.}} and writes it as CSV.
    """
    diffs = {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "node", "h",
                    f"abs_{label_a}_pu", f"abs_{label_b}_pu", "diff_pu"])
        for name in sorted(set(spectra_a) & set(spectra_b)):
            base = v_base if name.startswith("v") else i_base
            a = np.atleast_2d(spectra_a[name]) / base
            b = np.atleast_2d(spectra_b[name]) / base
            kind, node = name.split(":", 1)
            per_h = {}
            for h in index_set.orders:
                if h < 0:
                    continue
                col = index_set.idx(h)
                d = float(np.max(np.abs(a[:, col] - b[:, col])))
                per_h[h] = d
                w.writerow([kind, node, h,
                            f"{np.max(np.abs(a[:, col])):.6e}",
                            f"{np.max(np.abs(b[:, col])):.6e}",
                            f"{d:.6e}"])
            diffs[name] = per_h
    return diffs


def plot_spectra(spectra: dict, index_set: HarmonicIndexSet, path,
                 names: list = None, v_base: float = 1.0, i_base: float = 1.0):
    """Magnitude stem plots (SVG) of selected quantities, worst phase."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = names or sorted(spectra)
    fig, axes = plt.subplots(len(names), 1,
                             figsize=(7, 2.2 * len(names)), squeeze=False)
    hs = [h for h in index_set.orders if h >= 0]
    for ax, name in zip(axes[:, 0], names):
        base = v_base if name.startswith("v") else i_base
        spec = np.atleast_2d(spectra[name]) / base
        mags = [float(np.max(np.abs(spec[:, index_set.idx(h)]))) for h in hs]
        ax.stem(hs, mags)
        ax.set_yscale("log")
        ax.set_ylim(bottom=max(min([m for m in mags if m > 0], default=1e-9)
                               * 0.5, 1e-9))
        ax.set_ylabel(name)
        ax.grid(True, alpha=0.3)
    axes[-1, 0].set_xlabel("harmonic order")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
