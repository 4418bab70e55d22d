"""Compiled versus pure-numpy kernel timings.

Usage: python3 benchmarks/bench_kde.py [--sizes 1000 5000 20000] [--repeat 3]

The kernel table calls both modules directly. The end-to-end row runs a
short Burgers simulation in a subprocess per backend, selected through
``MFKE_BACKEND``.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mfke import _pykernels

try:
    from mfke import _core
except ImportError:
    _core = None

E2E = """
import time
from mfke.engine import SimConfig, GridSpec, simulate
from mfke.problems import builtin_problem, Sampler
spec = builtin_problem("burgers_flux", {"nu": 1.0}, initial=Sampler.gaussian(0.0, 0.5))
cfg = SimConfig(N=2000, dt=0.01, T=0.5, seed=0, kde_method="direct", grid=GridSpec(-6, 6, 200))
t = time.perf_counter(); simulate(spec, cfg); print(time.perf_counter() - t)
"""


def kernel_table(sizes, repeat: int) -> None:
    rng = np.random.default_rng(0)
    print(f"{'N':>8} {'queries':>8} {'numpy [s]':>11} {'compiled [s]':>13} {'speedup':>8}")
    for n in sizes:
        pos = rng.normal(size=n)
        w = np.ones(n)
        q = np.ascontiguousarray(pos[: min(n, 5000)])
        args = (pos, w, q, 0.1, _pykernels.GAUSSIAN, 0, os.cpu_count() or 1)
        py = min(timeit.repeat(lambda: _pykernels.kde_1d(*args), number=1, repeat=repeat))
        if _core is None:
            print(f"{n:>8} {q.size:>8} {py:>11.4f} {'n/a':>13} {'n/a':>8}")
            continue
        c = min(timeit.repeat(lambda: _core.kde_1d(*args), number=1, repeat=repeat))
        print(f"{n:>8} {q.size:>8} {py:>11.4f} {c:>13.4f} {py / c:>8.1f}")


def end_to_end() -> None:
    times = {}
    for backend in ("python", "compiled"):
        env = dict(os.environ, MFKE_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
        times[backend] = float(out.stdout.strip())
    print(f"burgers_flux N=2000, 50 steps, direct KDE: numpy {times['python']:.2f}s, "
          f"compiled {times['compiled']:.2f}s, speedup {times['python'] / times['compiled']:.1f}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 5000, 20000])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()
    kernel_table(args.sizes, args.repeat)
    if not args.skip_e2e:
        end_to_end()


if __name__ == "__main__":
    main()
