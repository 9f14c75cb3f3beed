"""The compiled kernels and the interpreter fallback must agree bit for bit."""

import json
import os
import subprocess
import sys

import pytest

SCRIPT = r"""
import hashlib, json
import numpy as np
from alertgame import BACKEND, GameConfig, simulate_runs
from alertgame import policies as P
from alertgame.rl import Hyperparams, train_attacker_table, train_defender_table

cfg = GameConfig.desk(horizon=24, defender_budget=240, attacker_budget=240)
att = P.default_stochastic_attacker(cfg)
rs = simulate_runs(P.s2_policy(cfg), att, cfg, 6, seed=11)
h = Hyperparams(episodes=150, exploring_starts=0.5)
d = train_defender_table(cfg, [(att, 0.5), (P.dump_attacker(cfg), 0.5)], h, seed=3)
a = train_attacker_table(cfg, d.policy(), h, seed=4,
                         daily=P.DailyBound.from_budget(240, 24))
rs2 = simulate_runs(d.policy(), a.policy(), cfg, 4, seed=12)
dig = lambda *xs: hashlib.sha256(b"".join(np.ascontiguousarray(x).tobytes() for x in xs)).hexdigest()
print(json.dumps({"backend": BACKEND,
                  "runs": dig(rs.b_post, rs.b_pre, rs.sup_costs),
                  "defender": dig(d.q, d.visits), "attacker": dig(a.q, a.visits),
                  "trained": dig(rs2.b_post, rs2.sup_costs)}))
"""


def _run(disable: bool) -> dict:
    env = dict(os.environ)
    env.pop("ALERTGAME_DISABLE_NUMBA", None)
    if disable:
        env["ALERTGAME_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True,
                         text=True, timeout=600, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


@pytest.mark.slow
def test_numba_and_python_backends_agree():
    pytest.importorskip("numba")
    fast, slow = _run(False), _run(True)
    assert fast.pop("backend") == "numba" and slow.pop("backend") == "python"
    assert fast == slow
