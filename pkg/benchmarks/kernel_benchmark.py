"""Compare the compiled and pure-numpy time-domain kernels.

The JIT choice is made at import time via the HARMFLOW_NO_NUMBA
environment variable, so the fallback measurement runs in a subprocess.

Usage: python benchmarks/kernel_benchmark.py [--periods N] [--dt SECONDS]
"""

import argparse
import json
import os
import subprocess
import sys
import textwrap

_WORKER = textwrap.dedent("""
    import json, sys, time
    import numpy as np
    from harmflow import _kernels
    from harmflow.harmonic import HarmonicIndexSet
    from harmflow.scenario import bundled_scenario
    from harmflow.tds import TdsOptions, simulate_direct

    periods, dt = int(sys.argv[1]), float(sys.argv[2])
    idx = HarmonicIndexSet(50.0, 25)
    scen = bundled_scenario("single_cider_te")
    cd = scen.build_ciders(idx)["R"]
    opts = TdsOptions(dt=dt, max_periods=periods, settle_tol_pu=0.0)
    # warm-up run to exclude compilation time from the measurement
    simulate_direct(scen.thevenin, cd, idx,
                    TdsOptions(dt=dt, max_periods=1, settle_tol_pu=0.0))
    cd = scen.build_ciders(idx)["R"]
    t0 = time.perf_counter()
    res = simulate_direct(scen.thevenin, cd, idx, opts)
    elapsed = time.perf_counter() - t0
    spec = res.get("i:R")
    print(json.dumps({
        "jit": bool(res.jit),
        "seconds": elapsed,
        "steps": int(round(periods / (50.0 * dt))),
        "checksum": float(np.sum(np.abs(spec))),
    }))
""")


def run_case(periods: int, dt: float, no_numba: bool) -> dict:
    env = dict(os.environ)
    if no_numba:
        env["HARMFLOW_NO_NUMBA"] = "1"
    else:
        env.pop("HARMFLOW_NO_NUMBA", None)
    out = subprocess.run([sys.executable, "-c", _WORKER,
                          str(periods), str(dt)],
                         check=True, capture_output=True, text=True, env=env)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--periods", type=int, default=10)
    ap.add_argument("--dt", type=float, default=2e-6)
    args = ap.parse_args()

    print(f"single-converter reference run, {args.periods} periods "
          f"at dt={args.dt:g}s")
    jit = run_case(args.periods, args.dt, no_numba=False)
    fb = run_case(args.periods, args.dt, no_numba=True)
    assert jit["jit"] and not fb["jit"]

    rel = abs(jit["checksum"] - fb["checksum"]) / jit["checksum"]
    print(f"  compiled kernel : {jit['seconds']:8.2f} s "
          f"({jit['steps'] / jit['seconds']:,.0f} steps/s)")
    print(f"  numpy fallback  : {fb['seconds']:8.2f} s "
          f"({fb['steps'] / fb['seconds']:,.0f} steps/s)")
    print(f"  speedup         : {fb['seconds'] / jit['seconds']:8.1f} x")
    print(f"  spectra agree to a relative checksum difference of {rel:.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
