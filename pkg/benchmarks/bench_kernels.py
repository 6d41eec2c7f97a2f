"""Time the numba and numpy kernel backends on the training-size workload.

    python benchmarks/bench_kernels.py [--steps 100] [--batch 64] [--units 64] [--repeat 5]

Each backend runs in its own interpreter because the backend is fixed at
import time. Numba compilation is excluded by a warm-up call.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from spikeseq import kernels

steps, batch, units, repeat = (int(a) for a in sys.argv[1:5])
rng = np.random.default_rng(0)
A = rng.normal(size=(steps, batch, units))
Af = rng.normal(size=(steps, batch, units))
Ac = rng.normal(size=(steps, batch, units))
W = rng.normal(size=(units, units)) / np.sqrt(units)
mask = np.ones((batch, units))
zeros = np.zeros((batch, units))
levels, b = 64.0, 3.0
gamma, reset = 4 * b / levels, b / levels

def lif():
    I, V, Y = kernels.lif_scan(A, 0.95, 0.9, b, levels, gamma, reset, False)
    kernels.lif_scan_grad(V, Y, 0.95, 0.9, b, levels, reset, zeros, zeros)

def gated():
    out = kernels.gated_scan(Af, Ac, W, W, mask, 0.95, b, levels, gamma, reset, 1 / levels,
                             False, np.nan, True)
    I, V, Y, F, C, AcT = out
    kernels.gated_scan_grad(I, V, Y, F, C, AcT, Y, mask, W, W, 0.95, b, levels, reset,
                            1 / levels, False, True, zeros, zeros)

res = {}
for name, fn in (("lif_fwd_bwd", lif), ("gated_v2_fwd_bwd", gated)):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    res[name] = best
print(json.dumps({"backend": kernels.BACKEND, **res}))
"""


def run(backend: str, args) -> dict:
    env = dict(os.environ, SPIKESEQ_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", CHILD, str(args.steps), str(args.batch),
                          str(args.units), str(args.repeat)],
                         env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--units", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    results = [run(b, args) for b in ("numba", "numpy")]
    print(f"workload: {args.steps} steps x {args.batch} sequences x {args.units} units "
          f"(best of {args.repeat})")
    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for key in ("lif_fwd_bwd", "gated_v2_fwd_bwd"):
        a, b = results[0][key], results[1][key]
        print(f"{key:<18} {1e3 * a:>10.2f} {1e3 * b:>10.2f} {b / a:>7.1f}x")


if __name__ == "__main__":
    main()
