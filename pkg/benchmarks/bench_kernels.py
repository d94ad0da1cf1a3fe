"""Timing comparison of the jitted kernels against the numpy fallback.

Runs each kernel in a subprocess with and without TORUSCTRL_DISABLE_NUMBA
so both import paths are exercised cleanly (the flag is read at import
time).  Usage: python3 benchmarks/bench_kernels.py [--repeats R]
"""

import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import json, os, sys, time
import numpy as np
from torusctrl import kernels

rng = np.random.default_rng(0)
sizes = {
    "synthesize (nmax=256, grid=2048, d=4)": None,
    "gram_phase (129x129 modes, 768 nodes)": None,
}

nmax, ngrid, d = 256, 2048, 4
coeffs = (rng.standard_normal((2 * nmax + 1, d))
          + 1j * rng.standard_normal((2 * nmax + 1, d)))
ns = np.arange(-nmax, nmax + 1).astype(float)
xs = 2.0 * np.pi * np.arange(ngrid) / ngrid

gn = np.arange(-64, 65).astype(float)
gw = rng.random(768)
gx = 2.0 * np.pi * rng.random(768)

# warm up (includes jit compilation when enabled)
kernels.synthesize(coeffs, ns, xs)
kernels.gram_phase_matrix(gn, gn, gw, gx)

repeats = int(sys.argv[1])
out = {"using_numba": kernels.USING_NUMBA}

t0 = time.perf_counter()
for _ in range(repeats):
    a = kernels.synthesize(coeffs, ns, xs)
out["synthesize_s"] = (time.perf_counter() - t0) / repeats
out["synthesize_checksum"] = float(np.abs(a).sum())

t0 = time.perf_counter()
for _ in range(repeats):
    b = kernels.gram_phase_matrix(gn, gn, gw, gx)
out["gram_phase_s"] = (time.perf_counter() - t0) / repeats
out["gram_phase_checksum"] = float(np.abs(b).sum())

print(json.dumps(out))
"""


def run_variant(disable, repeats):
    env = dict(os.environ)
    env["TORUSCTRL_DISABLE_NUMBA"] = "1" if disable else "0"
    res = subprocess.run([sys.executable, "-c", _WORKER, str(repeats)],
                         env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    numpy_run = run_variant(True, args.repeats)
    numba_run = run_variant(False, args.repeats)
    assert not numpy_run["using_numba"]

    print(f"repeats = {args.repeats}, numba available in jitted run: "
          f"{numba_run['using_numba']}")
    for key, label in (("synthesize", "synthesize"),
                       ("gram_phase", "gram_phase_matrix")):
        tn = numpy_run[f"{key}_s"]
        tj = numba_run[f"{key}_s"]
        drift = abs(numpy_run[f"{key}_checksum"]
                    - numba_run[f"{key}_checksum"])
        rel = drift / max(numpy_run[f"{key}_checksum"], 1e-300)
        print(f"{label:20s} numpy {tn * 1e3:8.2f} ms   "
              f"jit {tj * 1e3:8.2f} ms   speedup {tn / tj:5.2f}x   "
              f"checksum drift {rel:.2e}")
        if rel > 1e-10:
            raise SystemExit(f"{label}: paths disagree beyond tolerance")


if __name__ == "__main__":
    main()
