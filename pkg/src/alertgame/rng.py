"""Seed derivation and the random-stream handle.

Every stochastic object draws from a 6-word MRG32k3a state.  States are
derived from a master seed plus a key path with ``numpy.random.SeedSequence``
so that run ``r`` of an experiment always gets the same streams no matter how
runs are batched or split across workers.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K

# stream ids inside one episode / training run
ENV = 0
DEFENDER = 1
ATTACKER = 2
EXPLORE = 3
MIXTURE = 4


def derive_state(seed: int, *keys: int) -> np.ndarray:
    """Deterministic MRG32k3a state for ``(seed, *keys)``."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    words = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    raw = words.generate_state(6, dtype=np.uint64)
    state = np.empty(6, dtype=np.int64)
    state[:3] = raw[:3] % np.uint64(K.M1)
    state[3:] = raw[3:] % np.uint64(K.M2)
    # each half must not be all zero
    if not state[:3].any():
        state[0] = 1
    if not state[3:].any():
        state[3] = 1
    return state


def run_seeds(seed: int, runs: int, first_run: int = 0) -> np.ndarray:
    """``(runs, 3, 6)`` env/defender/attacker streams for runs
    ``first_run .. first_run + runs - 1``."""
    out = np.empty((runs, 3, 6), dtype=np.int64)
    for i in range(runs):
        r = first_run + i
        for stream in (ENV, DEFENDER, ATTACKER):
            out[i, stream] = derive_state(seed, r, stream)
    return out


class Rng:
    """Mutable random-stream handle (one per trace or per training run)."""

    def __init__(self, seed: int = 0, *keys: int, state: np.ndarray | None = None):
        if state is not None:
            self.state = np.array(state, dtype=np.int64).copy()
        else:
            self.state = derive_state(seed, *keys)

    def uniform(self) -> float:
        return float(K.uniform(self.state))

    def spawn(self, *keys: int) -> "Rng":
        """Child stream keyed on the current state (does not advance it)."""
        seed = int(self.state[0]) ^ (int(self.state[3]) << 20)
        return Rng(seed, *keys)

    def copy(self) -> "Rng":
        return Rng(state=self.state)

    def __repr__(self) -> str:
        return f"Rng(state={self.state.tolist()})"
