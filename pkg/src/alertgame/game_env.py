"""The hourly defender/attacker game on top of the alert queue.

State is ``<b, n, x, y>``: backlog, hours remaining, defender inspections
left, attacker alerts left.  Both players pick chunked amounts each hour; the
budget constraint is applied inside the transition (``min(d, x)``,
``min(a, y)``) so the action sets never change.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from . import _kernels as K
from .queue_core import DisturbanceModel, QueueParams, poisson_tables
from .rng import ENV, Rng, derive_state, run_seeds

if TYPE_CHECKING:
    from .policies import Policy


class IllegalActionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CostFunction:
    """Piecewise-linear backlog cost: 0 up to ``anchor_low``, 1 from
    ``anchor_high``, linear in between."""

    anchor_low: float = 1175.0
    anchor_high: float = 4350.0

    def __post_init__(self):
        if not self.anchor_low < self.anchor_high:
            raise ValueError("cost anchors must satisfy low < high")

    def __call__(self, v: float) -> float:
        return K.cost_f(float(v), float(self.anchor_low), float(self.anchor_high))


@dataclass(frozen=True)
class GameConfig:
    queue: QueueParams = field(default_factory=QueueParams)
    horizon: int = 336
    defender_budget: int = 28800
    attacker_budget: int = 28800
    per_hour_cap: int = 2400
    defender_chunk: int = 60
    attacker_chunk: int = 60
    cost_anchor_low: float = 1175.0
    cost_anchor_high: float = 4350.0
    shaping_weight: float = 0.1
    initial_backlog: int = 1175
    # uncapped variant: the attacker may send up to its whole budget in an hour
    attacker_uncapped: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        for name in ("defender_budget", "attacker_budget", "per_hour_cap", "initial_backlog"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("defender_chunk", "attacker_chunk"):
            chunk = getattr(self, name)
            if chunk < 1:
                raise ValueError(f"{name} must be >= 1")
            if self.per_hour_cap % chunk:
                raise ValueError(f"{name}={chunk} does not divide per_hour_cap={self.per_hour_cap}")
        if not self.cost_anchor_low < self.cost_anchor_high:
            raise ValueError("cost_anchor_low must be < cost_anchor_high")
        if not math.isfinite(self.shaping_weight) or self.shaping_weight < 0:
            raise ValueError("shaping_weight must be finite and nonnegative")

    # -- presets ----------------------------------------------------------

    @classmethod
    def paper(cls, **overrides) -> "GameConfig":
        return dataclasses.replace(cls(), **overrides)

    @classmethod
    def desk(cls, **overrides) -> "GameConfig":
        base = cls(
            queue=QueueParams(90.0, 96.0, DisturbanceModel()),
            horizon=48,
            defender_budget=1200,
            attacker_budget=1200,
            per_hour_cap=120,
            defender_chunk=60,
            attacker_chunk=60,
            cost_anchor_low=60.0,
            cost_anchor_high=240.0,
            initial_backlog=60,
        )
        return dataclasses.replace(base, **overrides)

    def replace(self, **changes) -> "GameConfig":
        return dataclasses.replace(self, **changes)

    # -- derived ----------------------------------------------------------

    @property
    def attacker_cap(self) -> int:
        if self.attacker_uncapped:
            return (self.attacker_budget // self.attacker_chunk) * self.attacker_chunk
        return self.per_hour_cap

    @property
    def cost(self) -> CostFunction:
        return CostFunction(self.cost_anchor_low, self.cost_anchor_high)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["queue"]["disturbance"]["factors"] = list(self.queue.disturbance.factors)
        d["queue"]["disturbance"]["probs"] = list(self.queue.disturbance.probs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GameConfig":
        d = dict(d)
        q = dict(d.pop("queue"))
        dist = q.pop("disturbance")
        dist = DisturbanceModel(dist["mode"], tuple(dist["factors"]), tuple(dist["probs"]))
        return cls(queue=QueueParams(disturbance=dist, **q), **d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @cached_property
    def kernel_env(self) -> tuple:
        ic = np.zeros(K.IC_SIZE, dtype=np.int64)
        ic[K.IC_N] = self.horizon
        ic[K.IC_X] = self.defender_budget
        ic[K.IC_Y] = self.attacker_budget
        ic[K.IC_E] = self.per_hour_cap
        ic[K.IC_MD] = self.defender_chunk
        ic[K.IC_MA] = self.attacker_chunk
        ic[K.IC_B0] = self.initial_backlog
        ic[K.IC_ACAP] = self.attacker_cap
        ic[K.IC_MODE] = 0 if self.queue.disturbance.mode == "fixed" else 1
        fc = np.zeros(K.FC_SIZE, dtype=np.float64)
        fc[K.FC_LOW] = self.cost_anchor_low
        fc[K.FC_HIGH] = self.cost_anchor_high
        fc[K.FC_W] = self.shaping_weight
        cdf, sf = poisson_tables(self.queue.lambda_nominal)
        caps, cum = self.queue.disturbance.capacity_table(self.queue.mu_nominal)
        return (ic, fc, cdf, sf, caps, cum)


@dataclass(frozen=True)
class GameState:
    b: int
    n: int
    x: int
    y: int

    def __post_init__(self):
        if min(self.b, self.n, self.x, self.y) < 0:
            raise ValueError(f"state fields must be nonnegative: {self}")


@dataclass(frozen=True)
class DefenderObservation:
    backlog: int
    remaining_hours: int
    defender_remaining: int
    last_defender_action: int = 0


@dataclass(frozen=True)
class AttackerObservation:
    state: GameState
    last_defender_action: int = 0
    last_attacker_action: int = 0


def observe(state: GameState, d: int = 0, a: int = 0):
    dobs = DefenderObservation(state.b, state.n, state.x, d)
    return dobs, AttackerObservation(state, d, a)


def _check_config(config: GameConfig, state: GameState | None = None):
    if not isinstance(config, GameConfig):
        raise TypeError("config must be a GameConfig")
    if state is not None:
        if state.n > config.horizon or state.x > config.defender_budget or state.y > config.attacker_budget:
            raise ValueError(f"state {state} exceeds the configured horizon or budgets")


def reset(config: GameConfig, seed: int = 0):
    """Initial ``(state, defender_obs, attacker_obs)``.

    The random stream for the episode is :func:`env_rng` of the same seed.
    """
    _check_config(config)
    state = GameState(config.initial_backlog, config.horizon,
                      config.defender_budget, config.attacker_budget)
    dobs, aobs = observe(state)
    return state, dobs, aobs


def env_rng(seed: int, run: int = 0) -> Rng:
    return Rng(state=derive_state(seed, run, ENV))


def legal_actions_defender(state: GameState | None, config: GameConfig) -> list[int]:
    return list(range(0, config.per_hour_cap + 1, config.defender_chunk))


def legal_actions_attacker(state: GameState | None, config: GameConfig) -> list[int]:
    return list(range(0, config.attacker_cap + 1, config.attacker_chunk))


def _is_legal(v: int, chunk: int, cap: int) -> bool:
    return 0 <= v <= cap and v % chunk == 0


def defender_cost(state: GameState, d: int, config: GameConfig | None = None) -> float:
    cost = (config or GameConfig()).cost
    return cost(max(0, state.b - min(d, state.x)))


def step(config: GameConfig, state: GameState, d: int, a: int, rng: Rng):
    """Advance one hour.  Returns ``(next_state, dobs, aobs, stage_cost)``."""
    _check_config(config, state)
    if state.n <= 0:
        raise ValueError("cannot step a terminal state (n = 0)")
    if not _is_legal(d, config.defender_chunk, config.per_hour_cap):
        raise IllegalActionError(f"illegal defender action {d}")
    if not _is_legal(a, config.attacker_chunk, config.attacker_cap):
        raise IllegalActionError(f"illegal attacker action {a}")
    ic, fc, cdf, sf, caps, cum = config.kernel_env
    c = defender_cost(state, d, config)
    rec = np.zeros(7, dtype=np.int64)
    K.env_step(state.b, state.x, state.y, d, a, cdf, sf, caps, cum,
               int(ic[K.IC_MODE]), rng.state, rec)
    nxt = GameState(int(rec[0]), state.n - 1, int(rec[1]), int(rec[2]))
    dobs, aobs = observe(nxt, d, a)
    return nxt, dobs, aobs, c


def _q(r: int, n: int, r0: int, horizon: int) -> float:
    return K.shaping_q(float(r), n, float(r0), float(horizon))


def shaped_reward_defender(config: GameConfig, state: GameState, d: int) -> float:
    x_next = max(0, state.x - d)
    q = _q(x_next, state.n - 1, config.defender_budget, config.horizon)
    return -defender_cost(state, d, config) + config.shaping_weight * q


def shaped_reward_attacker(config: GameConfig, state: GameState, d: int, a: int) -> float:
    y_next = max(0, state.y - a)
    q = _q(y_next, state.n - 1, config.attacker_budget, config.horizon)
    return defender_cost(state, d, config) + config.shaping_weight * q


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

CSV_COLUMNS = ("hour", "b_pre", "d", "a", "b_post", "x", "y", "stage_cost")


@dataclass
class RunTrace:
    """One episode: per-hour integer records plus the stage costs."""

    records: np.ndarray  # (N, T_SIZE) int64
    costs: np.ndarray  # (N,) float64

    hours = property(lambda self: self.records[:, K.T_HOUR])
    b_pre = property(lambda self: self.records[:, K.T_BPRE])
    d = property(lambda self: self.records[:, K.T_D])
    a = property(lambda self: self.records[:, K.T_A])
    b_post = property(lambda self: self.records[:, K.T_BPOST])
    x = property(lambda self: self.records[:, K.T_X])
    y = property(lambda self: self.records[:, K.T_Y])
    arrivals = property(lambda self: self.records[:, K.T_ARR])
    capacity = property(lambda self: self.records[:, K.T_CAP])
    d_eff = property(lambda self: self.records[:, K.T_DEFF])
    a_eff = property(lambda self: self.records[:, K.T_AEFF])

    @property
    def sup_cost(self) -> float:
        return float(self.costs.max()) if len(self.costs) else 0.0

    @property
    def max_backlog(self) -> int:
        return int(self.b_post.max())

    @property
    def defender_spend(self) -> int:
        return int(self.d_eff.sum())

    @property
    def attacker_spend(self) -> int:
        return int(self.a_eff.sum())

    def csv_rows(self):
        for rec, c in zip(self.records, self.costs):
            yield (int(rec[K.T_HOUR]), int(rec[K.T_BPRE]), int(rec[K.T_D]), int(rec[K.T_A]),
                   int(rec[K.T_BPOST]), int(rec[K.T_X]), int(rec[K.T_Y]), f"{c:.6f}")


@dataclass
class RunSet:
    """A batch of episodes sharing policies and config (run-major arrays)."""

    records: np.ndarray  # (runs, N, T_SIZE)
    costs: np.ndarray  # (runs, N)
    seed: int = 0
    first_run: int = 0

    def __len__(self) -> int:
        return self.records.shape[0]

    def __getitem__(self, i: int) -> RunTrace:
        return RunTrace(self.records[i], self.costs[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def sup_costs(self) -> np.ndarray:
        return self.costs.max(axis=1)

    @property
    def b_post(self) -> np.ndarray:
        return self.records[:, :, K.T_BPOST]

    @property
    def b_pre(self) -> np.ndarray:
        return self.records[:, :, K.T_BPRE]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("run," + ",".join(CSV_COLUMNS) + "\n")
            for i, trace in enumerate(self):
                run = self.first_run + i
                for row in trace.csv_rows():
                    fh.write(f"{run}," + ",".join(str(v) for v in row) + "\n")


def _raise_errors(errs: np.ndarray, first_run: int) -> None:
    bad = np.nonzero(errs[:, 0])[0]
    if not len(bad):
        return
    i = int(bad[0])
    code, hour, value = (int(v) for v in errs[i])
    what = {K.ERR_DEF_ACTION: "defender returned illegal action",
            K.ERR_ATT_ACTION: "attacker returned illegal action",
            K.ERR_KIND: "policy kind not valid for its role"}.get(code, f"error {code}")
    raise IllegalActionError(f"run {first_run + i}, hour {hour}: {what} ({value})")


def simulate_runs(defender: "Policy", attacker: "Policy", config: GameConfig,
                  runs: int, seed: int = 0, first_run: int = 0, jobs: int = 1) -> RunSet:
    """Run ``runs`` independent episodes; run ``r`` uses streams derived from
    ``(seed, r)`` so results do not depend on ``jobs``."""
    from .policies import pack_bank

    if runs < 1:
        raise ValueError("runs must be >= 1")
    defender.check_role("defender")
    attacker.check_role("attacker")
    env = config.kernel_env
    dbank = pack_bank([defender], config)
    abank = pack_bank([attacker], config)
    seeds = run_seeds(seed, runs, first_run)
    out = np.zeros((runs, config.horizon, K.T_SIZE), dtype=np.int64)
    costs = np.zeros((runs, config.horizon), dtype=np.float64)
    errs = np.zeros((runs, 3), dtype=np.int64)

    def work(lo: int, hi: int):
        K.run_batch(env, dbank, 0, abank, 0, seeds[lo:hi], out[lo:hi], costs[lo:hi], errs[lo:hi])

    jobs = max(1, min(int(jobs), runs))
    if jobs == 1:
        work(0, runs)
    else:
        edges = np.linspace(0, runs, jobs + 1).astype(int)
        with ThreadPoolExecutor(jobs) as pool:
            list(pool.map(work, edges[:-1], edges[1:]))
    _raise_errors(errs, first_run)
    return RunSet(out, costs, seed, first_run)


def episode(defender_policy: "Policy", attacker_policy: "Policy", config: GameConfig,
            seed: int = 0, run: int = 0) -> RunTrace:
    return simulate_runs(defender_policy, attacker_policy, config, 1, seed, first_run=run)[0]
