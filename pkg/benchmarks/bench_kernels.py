"""Compare the compiled kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import time (ADSBTRACK_DISABLE_NUMBA).  Usage:

    python3 benchmarks/bench_kernels.py [--steps 600] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from adsbtrack import kernels, sim
from adsbtrack._jit import NUMBA_ENABLED
from adsbtrack.imm import ImmConfig, initial_state, local_origin, model_bank
from adsbtrack.models import NoiseParams

steps, repeat = int(sys.argv[1]), int(sys.argv[2])
tr = sim.make_track(sim.SimConfig(steps=steps), np.random.SeedSequence(7), "bench")
cfg = ImmConfig()
bank = model_bank(1.0, cfg.q_mode)
theta = NoiseParams.isotropic(0.3, 0.05, 40.0, 4.0).as_vector()
Q1, Q2, R = bank.matrices(theta)
obs = np.ascontiguousarray(tr.obs - local_origin(tr.obs))
s0 = initial_state(obs[0], theta[6:], cfg)
args = (s0.cv.mean, s0.cv.cov, s0.cj.mean, s0.cj.cov, s0.mu, bank.F1, Q1, bank.F2, Q2,
        bank.H1, bank.H2, R, cfg.lam_array, cfg.aug_array, cfg.joseph)

def forward():
    return kernels.filter_steps(obs, *args)

out = forward()  # compile / warm up
stacks = out[2:7]
g = np.sign(out[0] - (tr.truth - local_origin(tr.obs)))

def reverse():
    return kernels.window_vjp(obs, *stacks, bank.F1, Q1, bank.F2, Q2, bank.H1, bank.H2, R,
                              cfg.lam_array, cfg.aug_array, cfg.joseph, g)

reverse()
res = {"numba": NUMBA_ENABLED}
for name, fn in (("forward", forward), ("reverse", reverse)):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    res[name] = best
print(json.dumps(res))
"""


def run(disable: bool, steps: int, repeat: int) -> dict:
    env = dict(os.environ)
    env["ADSBTRACK_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, "-c", WORKER, str(steps), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    jit = run(False, args.steps, args.repeat)
    ref = run(True, args.steps, args.repeat)
    print(f"{'pass':<10}{'numba [ms]':>14}{'numpy [ms]':>14}{'speedup':>10}   ({args.steps} IMM steps)")
    for name in ("forward", "reverse"):
        a, b = jit[name] * 1e3, ref[name] * 1e3
        print(f"{name:<10}{a:>14.2f}{b:>14.2f}{b / a:>9.1f}x")
    if not jit["numba"]:
        print("note: numba unavailable, both columns ran the numpy path")


if __name__ == "__main__":
    main()
