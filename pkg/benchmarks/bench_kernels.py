"""Time the hot kernels under both backends.

Each backend runs in its own interpreter because the choice is made once at
import.  Numba compilation is excluded by a warm-up call.

    python benchmarks/bench_kernels.py [--steps 200000] [--sites 64] [--repeat 3]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import textwrap

WORKER = textwrap.dedent("""
    import json, sys, time
    import numpy as np
    from collision_cml import _accel, stats
    from collision_cml.lattice import CollisionSpec, LatticeGeometry, Simulation
    from collision_cml.local_map import decimal_map

    steps, sites, repeat = map(int, sys.argv[1:4])
    g = LatticeGeometry.chain(sites)
    spec = CollisionSpec.default(0.05)
    lo, hi = spec.arrays
    rows = np.random.default_rng(0).random((20000, sites))
    phi = stats.Observable()

    def simulate(n):
        for _ in Simulation(decimal_map(), spec, g, n, seed=1).chunks():
            pass

    def couple():
        out = np.empty_like(rows)
        _accel.coupling_rows(rows, lo, hi, g.neighbors, np.zeros(sites, dtype=bool), out)

    def correlate(x):
        stats.space_time_correlation(x, phi, phi, 8, offsets=range(4), geom=g)

    simulate(100); couple(); correlate(rows[:1000])  # warm-up and compilation
    traj = Simulation(decimal_map(), spec, g, steps, seed=2).states()

    def best(fn):
        ts = []
        for _ in range(repeat):
            t = time.perf_counter(); fn(); ts.append(time.perf_counter() - t)
        return min(ts)

    print(json.dumps({
        "backend": _accel.BACKEND,
        "simulate": best(lambda: simulate(steps)),
        "coupling_rows": best(couple),
        "correlations": best(lambda: correlate(traj)),
    }))
""")


def run(backend: str, args) -> dict:
    env = dict(os.environ, COLLISION_CML_BACKEND=backend)
    out = subprocess.run(
        [sys.executable, "-c", WORKER, str(args.steps), str(args.sites), str(args.repeat)],
        env=env, check=True, capture_output=True, text=True,
    )
    return json.loads(out.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--sites", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    res = {b: run(b, args) for b in ("numba", "numpy")}
    print(f"{args.sites} sites, {args.steps} steps, best of {args.repeat}")
    print(f"{'kernel':<16}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for k in ("simulate", "coupling_rows", "correlations"):
        a, b = res["numba"][k], res["numpy"][k]
        print(f"{k:<16}{a:>12.4f}{b:>12.4f}{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
