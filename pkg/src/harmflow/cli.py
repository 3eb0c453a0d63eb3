"""Command-line interface.

Verbs:

- ``run hpf|hpf_no_dc|dhpf|tds <scenario>``: solve and export reports.
- ``validate <scenario>``: harmonic power flow against the time-domain
  oracle, with KPI export.
- ``compare <scenario>``: coupled vs decoupled harmonic power flow.
- ``ratios <scenario>``: harmonic current ratios of the first resource.

A scenario is either the name of a bundled case (``single_cider_te``,
``cigre_lv``) or a path to a JSON file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import report
from .scenario import Scenario, ScenarioError, bundled_scenario, load_scenario
from .solver import SolverOptions, compute_alpha_ratios, solve_dhpf, solve_hpf
from .tds import TdsOptions, simulate_direct, simulate_network


def _load(name: str) -> Scenario:
    if Path(name).exists():
        return load_scenario(name)
    return bundled_scenario(name)


def _bases(scen: Scenario):
    v_base = scen.v_base_rms * np.sqrt(2.0)
    i_base = scen.p_base_w / (3.0 * scen.v_base_rms * np.sqrt(2.0))
    return v_base, i_base


def _solve(scen: Scenario, args, with_dc: bool = True):
    idx = scen.index_set(h_max=args.h_max, guard=args.guard)
    net = scen.network()
    opts = SolverOptions(epsilon_pu=args.epsilon, max_iter=args.max_iter)
    res = solve_hpf(net, scen.forming_sources(),
                    scen.build_ciders(idx, with_dc=with_dc), idx, opts)
    return net, idx, res


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _export(spectra, study, out, prefix, scen):
    v_base, i_base = _bases(scen)
    report.write_spectra_json(spectra, study, out / f"{prefix}_spectra.json")
    report.write_thd_csv(spectra, study, out / f"{prefix}_thd.csv")
    report.write_waveforms_csv(spectra, study, out / f"{prefix}_waveforms.csv")
    names = sorted(spectra)[: min(6, len(spectra))]
    report.plot_spectra(spectra, study, out / f"{prefix}_spectra.svg",
                        names=names, v_base=v_base, i_base=i_base)


def cmd_run(args) -> int:
    scen = _load(args.scenario)
    study = scen.index_set(h_max=args.h_max)
    out = _out_dir(args)

    if args.method == "tds":
        opts = TdsOptions(dt=args.dt, max_periods=args.max_periods,
                          settle_tol_pu=args.settle_tol)
        ciders = scen.build_ciders(study)
        if scen.kind == "direct":
            node = scen.resources[0].node
            tds = simulate_direct(scen.thevenin, ciders[node], study, opts,
                                  v_base_rms=scen.v_base_rms,
                                  p_base_w=scen.p_base_w)
        else:
            tds = simulate_network(scen.network(), scen.forming_sources(),
                                   ciders, study, opts)
        print(f"time-domain run: settled={tds.settled} "
              f"periods={tds.periods_run} runtime={tds.runtime_s:.1f}s")
        _export(report.tds_spectra(tds), study, out, "tds", scen)
        return 0

    if args.method == "dhpf":
        idx = scen.index_set(h_max=args.h_max, guard=args.guard)
        net = scen.network()
        ratios = {
            r.node: compute_alpha_ratios(
                scen.cider_params[r.params], r.setpoints, scen.thevenin, idx,
                v_base_rms=scen.v_base_rms, p_base_w=scen.p_base_w)
            for r in scen.resources
        }
        res = solve_dhpf(net, scen.forming_sources(),
                         scen.build_ciders(idx), idx, ratios,
                         SolverOptions(epsilon_pu=args.epsilon,
                                       max_iter=args.max_iter))
    else:
        net, idx, res = _solve(scen, args, with_dc=(args.method == "hpf"))
    print(f"{args.method}: converged={res.converged} "
          f"iterations={res.iterations} runtime={res.runtime_s:.2f}s")
    if not res.converged:
        return 1
    _export(report.hpf_spectra(res, net, study), study, out,
            args.method, scen)
    return 0


def cmd_validate(args) -> int:
    scen = _load(args.scenario)
    study = scen.index_set(h_max=args.h_max)
    out = _out_dir(args)
    net, idx, res = _solve(scen, args)
    print(f"hpf: converged={res.converged} iterations={res.iterations} "
          f"runtime={res.runtime_s:.2f}s")
    if not res.converged:
        return 1
    hpf = report.hpf_spectra(res, net, study)

    opts = TdsOptions(dt=args.dt, max_periods=args.max_periods,
                      settle_tol_pu=args.settle_tol)
    ciders = scen.build_ciders(study)
    if scen.kind == "direct":
        node = scen.resources[0].node
        tds = simulate_direct(scen.thevenin, ciders[node], study, opts,
                              v_base_rms=scen.v_base_rms,
                              p_base_w=scen.p_base_w)
    else:
        tds = simulate_network(net, scen.forming_sources(), ciders,
                               study, opts)
    print(f"tds: settled={tds.settled} periods={tds.periods_run} "
          f"runtime={tds.runtime_s:.1f}s")
    tdss = report.tds_spectra(tds)
    v_base, i_base = _bases(scen)
    report.write_kpi_csv(hpf, tdss, study, out / "validation_kpi.csv",
                         v_base, i_base)
    _export(hpf, study, out, "hpf", scen)
    _export(tdss, study, out, "tds", scen)
    print(f"wrote {out / 'validation_kpi.csv'}")
    return 0


def cmd_compare(args) -> int:
    """Coupled vs decoupled harmonic power flow on the same scenario."""
    scen = _load(args.scenario)
    study = scen.index_set(h_max=args.h_max)
    out = _out_dir(args)
    net, idx, res = _solve(scen, args)
    if not res.converged:
        print("coupled solve did not converge", file=sys.stderr)
        return 1
    ratios = {
        r.node: compute_alpha_ratios(
            scen.cider_params[r.params], r.setpoints, scen.thevenin, idx,
            v_base_rms=scen.v_base_rms, p_base_w=scen.p_base_w)
        for r in scen.resources
    }
    res_d = solve_dhpf(net, scen.forming_sources(), scen.build_ciders(idx),
                       idx, ratios,
                       SolverOptions(epsilon_pu=args.epsilon,
                                     max_iter=args.max_iter))
    v_base, i_base = _bases(scen)
    diffs = report.write_comparison_report(
        report.hpf_spectra(res, net, study),
        report.hpf_spectra(res_d, net, study),
        study, out / "coupled_vs_decoupled.csv",
        "coupled", "decoupled", v_base, i_base)
    worst = {}
    for name, per_h in diffs.items():
        for h, d in per_h.items():
            if h > 1:
                worst[h] = max(worst.get(h, 0.0), d)
    print("largest coupled-vs-decoupled difference per harmonic order (p.u.):")
    for h in sorted(worst):
        print(f"  h={h:2d}: {worst[h]:.3e}")
    print(f"wrote {out / 'coupled_vs_decoupled.csv'}")
    return 0


def cmd_ratios(args) -> int:
    scen = _load(args.scenario)
    idx = scen.index_set(h_max=args.h_max, guard=args.guard)
    r = scen.resources[0]
    ratios = compute_alpha_ratios(scen.cider_params[r.params], r.setpoints,
                                  scen.thevenin, idx,
                                  v_base_rms=scen.v_base_rms,
                                  p_base_w=scen.p_base_w)
    doc = {}
    for h in idx.orders:
        if h < 1:
            continue
        mag = float(np.max(np.abs(ratios[:, idx.idx(h)])))
        doc[str(h)] = mag
        print(f"  h={h:2d}: |i_h/i_1| = {mag:.4e}")
    if args.out:
        out = _out_dir(args)
        (out / "ratios.json").write_text(json.dumps(doc, indent=1) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="harmflow",
        description="Harmonic power flow for three-phase grids with "
                    "converter-interfaced resources.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, tds=False):
        sp.add_argument("scenario", help="bundled scenario name or JSON path")
        sp.add_argument("--h-max", type=int, default=None,
                        help="study-band harmonic order (default: scenario)")
        sp.add_argument("--guard", type=int, default=20,
                        help="extra solve-band orders beyond the study band")
        sp.add_argument("--epsilon", type=float, default=1e-8,
                        help="convergence tolerance in p.u.")
        sp.add_argument("--max-iter", type=int, default=50)
        sp.add_argument("--out", default="harmflow_out",
                        help="output directory")
        if tds:
            sp.add_argument("--dt", type=float, default=2e-6,
                            help="oracle integration step in seconds")
            sp.add_argument("--max-periods", type=int, default=100)
            sp.add_argument("--settle-tol", type=float, default=1e-7,
                            help="period-to-period settling tolerance, p.u.")

    sp = sub.add_parser("run", help="solve a scenario and export reports")
    sp.add_argument("method", choices=["hpf", "hpf_no_dc", "dhpf", "tds"])
    common(sp, tds=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate",
                        help="harmonic power flow vs time-domain oracle")
    common(sp, tds=True)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("compare",
                        help="coupled vs decoupled harmonic power flow")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("ratios",
                        help="harmonic current ratios of the first resource")
    common(sp)
    sp.set_defaults(func=cmd_ratios)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
