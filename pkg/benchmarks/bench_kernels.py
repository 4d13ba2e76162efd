"""Time the numba kernels against the numpy fallback.

Each backend runs in its own interpreter because the choice is made at import
time from SVOMERGE_DISABLE_NUMBA. Usage:

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, timeit
import numpy as np
from svomerge import _accel
from svomerge.config import Config, ObservationConfig
from svomerge.env import MergeEnv

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
out = {"backend": _accel.backend()}


def best(stmt, number):
    stmt()  # warm-up (includes jit compilation)
    return min(timeit.repeat(stmt, number=number, repeat=repeat)) / number


v = rng.uniform(-40, 40, 100_000)
out["pixel_values 100k"] = best(lambda: _accel.pixel_values(v, 2.0, 0.27, 0.5), 20)

n = 12
plane = np.zeros((128, 32))
cl, cd = rng.uniform(-30, 80, n), rng.uniform(-8, 4, n)
hl, hw, head, vals = np.full(n, 2.5), np.full(n, 1.0), rng.normal(0, 0.1, n), rng.random(n)
out["rasterize 12 boxes 128x32"] = best(
    lambda: _accel.rasterize_boxes(plane, cl, cd, hl, hw, head, vals, -38.4, 8.0, 1.0, 0.5), 200)

m = 40
cx, cy = rng.uniform(0, 300, m), rng.uniform(-10, 6, m)
out["overlaps 40 vehicles"] = best(
    lambda: _accel.overlapping_pairs(cx, cy, rng.normal(0, 0.1, m), np.full(m, 2.5), np.full(m, 1.0), np.ones(m, bool)), 500)

k = 100
sp, v0, gap, dv = rng.uniform(10, 30, k), np.full(k, 25.0), rng.uniform(5, 60, k), rng.normal(0, 2, k)
has = np.ones(k, bool)
out["idm 100 vehicles"] = best(
    lambda: _accel.idm_accelerations(sp, v0, gap, dv, has, 1.5, 2.0, 1.5, 2.0, 4.0, 9.0), 2000)

cfg = Config(observation=ObservationConfig(width=64, height=32, m_per_px_l=2.0, m_per_px_d=0.6))


def episode():
    env = MergeEnv(cfg)
    env.reset(3)
    done = False
    while not done:
        _, _, _, done, _ = env.step({a: 1 for a in env.agents})


out["full episode (idle agents)"] = best(episode, 1)
print(json.dumps(out))
"""


def run(disable: bool, repeat: int) -> dict:
    env = {**os.environ, "SVOMERGE_DISABLE_NUMBA": "1" if disable else "0"}
    res = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    nb, np_ = run(False, args.repeat), run(True, args.repeat)
    if nb["backend"] != "numba":
        print("numba unavailable; only the numpy path was timed")
    print(f"{'kernel':32s} {'numba':>12s} {'numpy':>12s} {'speedup':>8s}")
    for key in nb:
        if key == "backend":
            continue
        a, b = nb[key], np_[key]
        print(f"{key:32s} {a * 1e6:10.1f}us {b * 1e6:10.1f}us {b / a:7.1f}x")


if __name__ == "__main__":
    main()
