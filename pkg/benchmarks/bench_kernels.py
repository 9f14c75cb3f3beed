"""Time the compiled kernels against the interpreter fallback.

    python benchmarks/bench_kernels.py [--runs 200] [--episodes 2000]

Each backend runs in its own subprocess (the switch is read at import).
The numba figures exclude compilation: one warm-up call precedes timing.
"""

import argparse
import json
import os
import subprocess
import sys

WORK = r"""
import json, sys, time
from alertgame import BACKEND, GameConfig, simulate_runs
from alertgame import policies as P
from alertgame.rl import Hyperparams, train_attacker_table, train_defender_table

runs, episodes = int(sys.argv[1]), int(sys.argv[2])
cfg = GameConfig.desk()
att = P.default_stochastic_attacker(cfg)
h = Hyperparams(episodes=episodes)

def timed(fn):
    fn()  # warm-up (compilation under numba)
    t = time.perf_counter()
    fn()
    return time.perf_counter() - t

out = {"backend": BACKEND,
       "simulate_s": timed(lambda: simulate_runs(P.s2_policy(cfg), att, cfg, runs, seed=1)),
       "train_defender_s": timed(lambda: train_defender_table(cfg, [(att, 1.0)], h, seed=1)),
       "train_attacker_s": timed(lambda: train_attacker_table(cfg, P.s1_policy(cfg), h, seed=1))}
out["hours_simulated"] = runs * cfg.horizon
out["steps_trained"] = episodes * cfg.horizon
print(json.dumps(out))
"""


def run(disable: bool, runs: int, episodes: int) -> dict:
    env = dict(os.environ)
    env.pop("ALERTGAME_DISABLE_NUMBA", None)
    if disable:
        env["ALERTGAME_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORK, str(runs), str(episodes)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--runs", type=int, default=200)
    ap.add_argument("--episodes", type=int, default=2000)
    args = ap.parse_args()
    fast = run(False, args.runs, args.episodes)
    slow = run(True, args.runs, args.episodes)
    print(f"{'stage':18s} {'numba s':>10s} {'python s':>10s} {'speedup':>9s}")
    for key in ("simulate_s", "train_defender_s", "train_attacker_s"):
        print(f"{key[:-2]:18s} {fast[key]:10.4f} {slow[key]:10.4f} {slow[key] / fast[key]:8.1f}x")
    print(f"({fast['hours_simulated']} simulated hours, {fast['steps_trained']} training steps; "
          f"backends {fast['backend']} / {slow['backend']})")


if __name__ == "__main__":
    main()
