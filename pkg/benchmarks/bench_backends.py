"""Compare the numba and pure-numpy kernel lanes on identical workloads.

Runs the same teacher-forced simulation through both backends in
subprocesses (the lane is chosen at import time via ORIGAMIRC_BACKEND),
reports wall time per simulated second, and checks that the two lanes agree
bitwise-closely on the recorded trace.

Usage: python benchmarks/bench_backends.py [--duration 5.0] [--rows 9]
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile

WORKER = r"""
import json, sys, time
import numpy as np
from origamirc.dynamics import SimConfig, corner_pins
from origamirc.mesh import MiuraDesign, build_miura
from origamirc.reservoir import assign_roles, teacher_force
from origamirc.backend import backend_name

duration, n_rows, out_path = float(sys.argv[1]), int(sys.argv[2]), sys.argv[3]
mesh = build_miura(MiuraDesign(n_rows=n_rows, n_cols=n_rows))
config = SimConfig(record_stride=10, pinned_nodes=corner_pins(mesh))
roles = assign_roles(mesh, feedback_fracs=(0.15, 0.15), seed=0)
n = int(round(duration / config.dt))
t = np.arange(n) * config.dt
teacher = 0.3 * np.column_stack([np.sin(2 * np.pi * t),
                                 np.cos(2 * np.pi * t)])

# warm-up triggers jit compilation outside the timed region
teacher_force(mesh, roles, teacher=teacher[:100], duration=0.1,
              config=config)
start = time.perf_counter()
trace, _ = teacher_force(mesh, roles, teacher=teacher, duration=duration,
                         config=config)
elapsed = time.perf_counter() - start
np.save(out_path + ".npy", trace.phi)
with open(out_path, "w") as fh:
    json.dump({"backend": backend_name(), "elapsed": elapsed,
               "steps": n}, fh)
"""


def run_lane(backend, duration, rows, out_path):
    env = dict(os.environ, ORIGAMIRC_BACKEND=backend)
    subprocess.run([sys.executable, "-c", WORKER, str(duration), str(rows),
                    out_path], env=env, check=True)
    with open(out_path) as fh:
        return json.load(fh)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--duration", type=float, default=5.0,
                        help="simulated seconds per lane")
    parser.add_argument("--rows", type=int, default=9,
                        help="mesh rows (= cols)")
    args = parser.parse_args()

    import numpy as np
    with tempfile.TemporaryDirectory() as tmp:
        results = {}
        traces = {}
        for backend in ("numba", "numpy"):
            out = os.path.join(tmp, backend + ".json")
            results[backend] = run_lane(backend, args.duration, args.rows,
                                        out)
            traces[backend] = np.load(out + ".npy")

        for backend, res in results.items():
            per_sim_s = res["elapsed"] / args.duration
            print(f"{backend:>6}: {res['elapsed']:.3f} s wall for "
                  f"{args.duration:g} s simulated "
                  f"({per_sim_s:.3f} wall s / sim s, {res['steps']} steps)")
        speedup = results["numpy"]["elapsed"] / results["numba"]["elapsed"]
        print(f"numba speedup: {speedup:.1f}x")

        diff = np.abs(traces["numba"] - traces["numpy"]).max()
        print(f"max |phi_numba - phi_numpy| = {diff:.3e} rad")
        if diff > 1e-8:
            print("WARNING: lanes disagree beyond float tolerance",
                  file=sys.stderr)
            sys.exit(1)


if __name__ == "__main__":
    main()
