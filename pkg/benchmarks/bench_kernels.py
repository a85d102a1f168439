"""Compare the compiled and pure-Python path kernels.

Usage: ``python benchmarks/bench_kernels.py [--paths N] [--repeat R]``

Runs the same exit-time sample through every importable backend and
prints the best wall time, steps per second, the speed-up over the numpy
backend and the mean exit time. The two backends round ``sin``/``cos``
differently in the last bit; the saddles of the flow amplify that, so
long paths drift apart and only the statistics (not the paths) agree.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from rollstir import kernels, sde
from rollstir.flow import make_handle

CASES = [("cutoff", 0.2, 25.0), ("standard", 0.2, 25.0), ("cutoff", 0.1, 100.0)]


def run_once(backend, params, n, seed=7):
    z = np.tile([0.5, 0.5], (n, 1))
    t = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    t0 = time.perf_counter()
    backend.simulate(params, z, t, steps, np.arange(n, dtype=np.uint64), seed)
    return time.perf_counter() - t0, steps, t


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=2)
    args = ap.parse_args(argv)

    backends = kernels.backends()
    print(f"backends: {', '.join(sorted(backends))}; default: {kernels.BACKEND}")
    print(f"{'case':<24}{'backend':<9}{'seconds':>9}{'Msteps/s':>10}{'speed-up':>10}"
          f"{'mean tau':>10}{'+- se':>8}")
    for kind, eps, A in CASES:
        params = sde.kernel_params(sde.SdeConfig(make_handle(kind, eps, A)))
        timings = {}
        for name, mod in sorted(backends.items(), key=lambda kv: kv[0] != "python"):
            best = float("inf")
            for _ in range(args.repeat):
                secs, steps, tau = run_once(mod, params, args.paths)
                best = min(best, secs)
            timings[name] = (best, steps.sum(), tau.mean(), tau.std(ddof=1) / np.sqrt(tau.size))
        label = f"{kind} eps={eps:g} A={A:g}"
        for name, (secs, total, mean, se) in timings.items():
            speed = timings["python"][0] / secs
            print(f"{label:<24}{name:<9}{secs:>9.3f}{total / secs / 1e6:>10.3f}{speed:>9.1f}x"
                  f"{mean:>10.4f}{se:>8.4f}")


if __name__ == "__main__":
    main()
