"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeats 5] [--json out.json]

Each kernel is timed best-of-``repeats`` on both backends with identical
inputs; outputs are checked for agreement before any timing is reported.
The last row times the whole 1D pipeline (one 0.1 ms Godunov run on 36
fibers) in a fresh interpreter per backend, since the backend is fixed at
import.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from myosim import kernels
from myosim.cell import CellParams, HodgkinHuxleyModel
from myosim.studies import fiber_system

PIPELINE = (
    "import time; from myosim import kernels; from myosim.fiber import FiberMesh;"
    "from myosim.splitting import SplittingSchedule, resting_fibers, run_1d;"
    "from myosim.cell import HodgkinHuxleyModel, StimulusProtocol;"
    "m = FiberMesh.uniform(31); s = SplittingSchedule.godunov(5e-4, 5, dt_3d=0.1);"
    "best = 1e9\n"
    "for _ in range({repeats}):\n"
    "    st = resting_fibers(HodgkinHuxleyModel(), m, 36); t = time.perf_counter()\n"
    "    run_1d(st, s, m, StimulusProtocol(), 0.1); best = min(best, time.perf_counter() - t)\n"
    "print(kernels.BACKEND, best)"
)


def best_of(fn, repeats):
    out = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        out = min(out, time.perf_counter() - t0)
    return out


def _rows(system):
    return system.sub, system.diag, system.sup, system.rhs


def cases(n_cells):
    p = CellParams().vector()
    y0 = HodgkinHuxleyModel().initial_state(n_cells)
    stim = np.zeros(n_cells)
    stim[::7] = 1200.0
    sys1, _ = fiber_system(100_000)
    sys36 = [np.tile(a, (36, 1)) for a in _rows(fiber_system(31)[0])]
    return {
        "hh_advance euler x50": lambda k: (y := y0.copy(), k.hh_advance(y, stim, 1e-5, 50, False, p), y)[-1],
        "hh_advance heun x2": lambda k: (y := y0.copy(), k.hh_advance(y, stim, 2.5e-4, 2, True, p), y)[-1],
        "hh_rhs": lambda k: k.hh_rhs(y0, stim, p),
        "thomas n=1e5": lambda k: k.thomas(*_rows(sys1)),
        "thomas_batch 36x31": lambda k: k.thomas_batch(*sys36),
    }


def pipeline(repeats):
    out = {}
    for pure in (False, True):
        env = dict(os.environ)
        env.pop("MYOSIM_PURE", None)
        if pure:
            env["MYOSIM_PURE"] = "1"
        proc = subprocess.run([sys.executable, "-c", PIPELINE.format(repeats=repeats)], env=env,
                              capture_output=True, text=True, check=True)
        name, secs = proc.stdout.split()
        out[name] = float(secs)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--cells", type=int, default=20_000)
    ap.add_argument("--json", help="also write the results here")
    ap.add_argument("--no-pipeline", action="store_true")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available", file=sys.stderr)
    rows = []
    for name, fn in cases(args.cells).items():
        ref = fn(backends["python"])
        row = {"kernel": name}
        for b, mod in sorted(backends.items()):
            np.testing.assert_allclose(fn(mod), ref, rtol=1e-10, atol=1e-10)
            row[b] = best_of(lambda: fn(mod), args.repeats)
        rows.append(row)
    if not args.no_pipeline:
        rows.append({"kernel": "1D pipeline 36 fibers 0.1 ms", **pipeline(max(1, args.repeats // 2))})

    names = sorted(backends)
    print(f"{'kernel':32s}" + "".join(f"{b + ' [s]':>16s}" for b in names) + f"{'speedup':>10s}")
    for r in rows:
        sp = r["python"] / r["compiled"] if "compiled" in r else float("nan")
        print(f"{r['kernel']:32s}" + "".join(f"{r.get(b, float('nan')):16.3e}" for b in names) + f"{sp:10.1f}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
