"""Tabular Q-learning for the defender MDP and the attacker best response.

States are aggregated onto a coarse grid (backlog, hours left, budgets);
the loops themselves live in ``_kernels`` and run compiled when numba is on.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .game_env import GameConfig
from .policies import DailyBound, Policy, pack_bank
from .rng import ATTACKER, DEFENDER, ENV, EXPLORE, MIXTURE, derive_state

MAGIC = b"ALGQTBL\x00"
FORMAT_VERSION = 1
MAX_TABLE_ENTRIES = 60_000_000
TRAIN_KEY = 1 << 30


class TrainingError(RuntimeError):
    """Non-finite values or an invalid opponent during training."""


class ProvenanceError(ValueError):
    """A stored table does not match the config it is being used with."""


@dataclass(frozen=True)
class Aggregation:
    backlog_bin: int = 60
    backlog_cap: int = 6000
    budget_bin: int = 1200
    hours_bin: int = 8

    def __post_init__(self):
        if min(self.backlog_bin, self.budget_bin, self.hours_bin) < 1:
            raise ValueError("all bins must be >= 1")

    @classmethod
    def for_config(cls, config: GameConfig) -> "Aggregation":
        hi = config.cost_anchor_high
        if hi >= 1000:
            return cls(60, 6000, 1200, 8)
        return cls(max(1, round(hi / 24)), int(round(hi * 1.25)), config.per_hour_cap, 4)

    def check(self, config: GameConfig) -> None:
        if self.backlog_cap < config.cost_anchor_high:
            raise ValueError("backlog_cap must be >= cost_anchor_high")

    def dims(self, config: GameConfig, role: str) -> tuple[int, int, int, int]:
        db = self.backlog_cap // self.backlog_bin + 1
        dh = config.horizon // self.hours_bin + 1
        dx = config.defender_budget // self.budget_bin + 1
        dy = config.attacker_budget // self.budget_bin + 1 if role == "attacker" else 1
        return db, dh, dx, dy

    def n_states(self, config: GameConfig, role: str) -> int:
        db, dh, dx, dy = self.dims(config, role)
        return db * dh * dx * dy

    def kernel_array(self, config: GameConfig, role: str) -> np.ndarray:
        db, dh, dx, dy = self.dims(config, role)
        return np.array([self.backlog_bin, self.backlog_cap, self.budget_bin, self.hours_bin,
                         db, dh, dx, dy], dtype=np.int64)


@dataclass(frozen=True)
class Hyperparams:
    episodes: int = 100_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    anneal_fraction: float = 0.8
    gamma: float = 0.99
    lr_power: float = 0.6
    lr_constant: float | None = None
    exploring_starts: float = 0.0

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if not (0.0 <= self.eps_end <= self.eps_start <= 1.0):
            raise ValueError("need 0 <= eps_end <= eps_start <= 1 (nonincreasing schedule)")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if self.lr_constant is not None and not (0.0 <= self.lr_constant <= 1.0):
            raise ValueError("lr_constant must lie in [0, 1]")
        if not 0.0 <= self.exploring_starts <= 1.0:
            raise ValueError("exploring_starts must lie in [0, 1]")

    def kernel_array(self) -> np.ndarray:
        h = np.zeros(K.H_SIZE, dtype=np.float64)
        h[K.H_EPISODES] = self.episodes
        h[K.H_EPS0] = self.eps_start
        h[K.H_EPS1] = self.eps_end
        h[K.H_ANNEAL] = self.anneal_fraction
        h[K.H_GAMMA] = self.gamma
        h[K.H_LRPOW] = self.lr_power
        h[K.H_LRCONST] = -1.0 if self.lr_constant is None else self.lr_constant
        h[K.H_ESTART] = self.exploring_starts
        return h


@dataclass
class QTable:
    q: np.ndarray
    visits: np.ndarray
    role: str
    chunk: int
    aggregation: Aggregation
    config: GameConfig
    hyper: Hyperparams = field(default_factory=Hyperparams)
    seed: int = 0
    daily: DailyBound | None = None
    opponents: list = field(default_factory=list)

    @classmethod
    def empty(cls, config: GameConfig, role: str, aggregation: Aggregation | None = None,
              chunk: int | None = None, **kw) -> "QTable":
        agg = aggregation or Aggregation.for_config(config)
        agg.check(config)
        if chunk is None:
            chunk = config.defender_chunk if role == "defender" else config.attacker_chunk
        cap = config.per_hour_cap if role == "defender" else config.attacker_cap
        n_actions = cap // chunk + 1
        n_states = agg.n_states(config, role)
        if n_states * n_actions > MAX_TABLE_ENTRIES:
            raise ValueError(f"table of {n_states} x {n_actions} is too large; coarsen the aggregation")
        return cls(np.zeros((n_states, n_actions)), np.zeros((n_states, n_actions), dtype=np.int64),
                   role, chunk, agg, config, **kw)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def greedy_actions(self) -> np.ndarray:
        out = np.zeros(self.q.shape[0], dtype=np.int64)
        K.greedy_table(self.q, out)
        return out

    def policy(self) -> Policy:
        params = {
            "chunk": self.chunk,
            "cap": self.chunk * (self.q.shape[1] - 1),
            "aggregation": asdict(self.aggregation),
            "dims": list(self.aggregation.dims(self.config, self.role)),
            "config_hash": self.config_hash,
            "seed": self.seed,
            "episodes": self.hyper.episodes,
        }
        if self.opponents:
            params["opponents"] = list(self.opponents)
        return Policy(self.role, "table", params, self.greedy_actions(), self.daily)

    # -- persistence ------------------------------------------------------

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "role": self.role,
            "chunk": self.chunk,
            "shape": list(self.q.shape),
            "aggregation": asdict(self.aggregation),
            "hyper": asdict(self.hyper),
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config.to_dict(),
            "daily_bound": None if self.daily is None else asdict(self.daily),
            "opponents": list(self.opponents),
        }

    def save(self, path: str | Path) -> None:
        head = json.dumps(self.header(), sort_keys=True).encode()
        buf = io.BytesIO()
        np.save(buf, self.q, allow_pickle=False)
        np.save(buf, self.visits, allow_pickle=False)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", FORMAT_VERSION, len(head)))
            fh.write(head)
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path, config: GameConfig | None = None) -> "QTable":
        with open(path, "rb") as fh:
            if fh.read(len(MAGIC)) != MAGIC:
                raise ProvenanceError(f"{path}: not a Q-table file")
            version, hlen = struct.unpack("<II", fh.read(8))
            if version != FORMAT_VERSION:
                raise ProvenanceError(f"{path}: unsupported format version {version}")
            head = json.loads(fh.read(hlen))
            q = np.load(fh, allow_pickle=False)
            visits = np.load(fh, allow_pickle=False)
        stored = GameConfig.from_dict(head["config"])
        if stored.config_hash() != head["config_hash"]:
            raise ProvenanceError(f"{path}: header config does not match its hash")
        if config is not None and config.config_hash() != head["config_hash"]:
            raise ProvenanceError(
                f"{path}: trained under config {head['config_hash']}, "
                f"refusing to use it with config {config.config_hash()}")
        daily = DailyBound(**head["daily_bound"]) if head["daily_bound"] else None
        return cls(q, visits, head["role"], head["chunk"], Aggregation(**head["aggregation"]),
                   stored, Hyperparams(**head["hyper"]), head["seed"], daily, head["opponents"])


# --------------------------------------------------------------------------
# thin wrappers over the kernels
# --------------------------------------------------------------------------

def encode(obs, agg: Aggregation, config: GameConfig) -> int:
    """State index of a defender or attacker observation."""
    from .game_env import AttackerObservation, DefenderObservation

    if isinstance(obs, DefenderObservation):
        role, b, n, x, y = "defender", obs.backlog, obs.remaining_hours, obs.defender_remaining, 0
    elif isinstance(obs, AttackerObservation):
        s = obs.state
        role, b, n, x, y = "attacker", s.b, s.n, s.x, s.y
    else:
        raise TypeError(f"unsupported observation {type(obs).__name__}")
    db, dh, dx, dy = agg.dims(config, role)
    return int(K.encode_state(b, n, x, y, agg.backlog_bin, agg.backlog_cap, agg.hours_bin,
                              agg.budget_bin, dh, dx, dy))


def q_update(table: QTable, s_idx: int, a_idx: int, reward: float, s2_idx: int,
             terminal: bool, hyper: Hyperparams) -> QTable:
    K.q_update(table.q, table.visits, s_idx, a_idx, float(reward), s2_idx, bool(terminal),
               hyper.kernel_array())
    return table


def greedy_action(table: QTable | np.ndarray, s_idx: int) -> int:
    q = table.q if isinstance(table, QTable) else np.asarray(table, dtype=np.float64)
    return int(K.greedy(q[s_idx]))


def _streams(seed: int, *names: int) -> list[np.ndarray]:
    return [derive_state(seed, TRAIN_KEY, name) for name in names]


def _check_finite(table: QTable, code: int, what: str) -> None:
    if code == K.ERR_NONFINITE or not np.isfinite(table.q).all():
        bad = np.argwhere(~np.isfinite(table.q))
        raise TrainingError(f"{what}: Q-values diverged (first bad entry {bad[:1].tolist()})")
    if code == K.ERR_KIND:
        raise TrainingError(f"{what}: opponent policy has a kind invalid for its role")


def train_defender_table(config: GameConfig, opponent_mixture: Sequence[tuple[Policy, float]],
                         hyper: Hyperparams = Hyperparams(), agg: Aggregation | None = None,
                         seed: int = 0) -> QTable:
    if not opponent_mixture:
        raise ValueError("opponent mixture is empty")
    weights = np.array([w for _, w in opponent_mixture], dtype=np.float64)
    if (weights < 0).any() or not np.isclose(weights.sum(), 1.0, atol=1e-9):
        raise ValueError("mixture weights must be nonnegative and sum to 1")
    for pol, _ in opponent_mixture:
        pol.check_role("attacker")
    table = QTable.empty(config, "defender", agg, hyper=hyper, seed=seed,
                         opponents=[p.describe() for p, _ in opponent_mixture])
    wcum = np.cumsum(weights)
    wcum[-1] = 1.0
    abank = pack_bank([p for p, _ in opponent_mixture], config)
    s_env, s_exp, s_att, s_mix = _streams(seed, ENV, EXPLORE, ATTACKER, MIXTURE)
    code = K.train_defender_loop(config.kernel_env, abank, wcum,
                                 table.aggregation.kernel_array(config, "defender"),
                                 table.q, table.visits, hyper.kernel_array(),
                                 s_env, s_exp, s_att, s_mix, table.chunk)
    _check_finite(table, code, "defender training")
    return table


def train_defender(config: GameConfig, opponent_mixture: Sequence[tuple[Policy, float]],
                   hyper: Hyperparams = Hyperparams(), agg: Aggregation | None = None,
                   seed: int = 0) -> Policy:
    return train_defender_table(config, opponent_mixture, hyper, agg, seed).policy()


def train_attacker_table(config: GameConfig, frozen_defender: Policy,
                         hyper: Hyperparams = Hyperparams(), agg: Aggregation | None = None,
                         seed: int = 0, daily: DailyBound | None = None) -> QTable:
    frozen_defender.check_role("defender")
    table = QTable.empty(config, "attacker", agg, hyper=hyper, seed=seed, daily=daily,
                         opponents=[frozen_defender.describe()])
    dbank = pack_bank([frozen_defender], config)
    s_env, s_exp, s_def = _streams(seed, ENV, EXPLORE, DEFENDER)
    limit = -1 if daily is None else daily.per_day_limit
    day_len = 24 if daily is None else daily.day_length
    code = K.train_attacker_loop(config.kernel_env, dbank, 0,
                                 table.aggregation.kernel_array(config, "attacker"),
                                 table.q, table.visits, hyper.kernel_array(),
                                 s_env, s_exp, s_def, table.chunk, limit, day_len)
    _check_finite(table, code, "attacker training")
    return table


def train_attacker_best_response(config: GameConfig, frozen_defender: Policy,
                                 hyper: Hyperparams = Hyperparams(),
                                 agg: Aggregation | None = None, seed: int = 0,
                                 daily: DailyBound | None = None) -> Policy:
    return train_attacker_table(config, frozen_defender, hyper, agg, seed, daily).policy()


# --------------------------------------------------------------------------
# frozen policies on disk
# --------------------------------------------------------------------------

POLICY_MAGIC = b"ALGPOLC\x00"


def save_policy(policy: Policy, config: GameConfig, path: str | Path) -> None:
    """Write ``policy`` together with the config it must be used under."""
    head = {
        "format_version": FORMAT_VERSION,
        "role": policy.role,
        "kind": policy.kind,
        "params": policy.params,
        "daily_bound": None if policy.daily is None else asdict(policy.daily),
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "has_table": policy.table is not None,
    }
    blob = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(POLICY_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        if policy.table is not None:
            np.save(fh, np.asarray(policy.table), allow_pickle=False)


def load_policy(path: str | Path, config: GameConfig | None = None) -> Policy:
    """Read a policy file; refuses it when ``config`` differs from the training config."""
    try:
        fh = open(path, "rb")
    except FileNotFoundError as exc:
        raise ProvenanceError(f"{path}: no such policy file") from exc
    with fh:
        if fh.read(len(POLICY_MAGIC)) != POLICY_MAGIC:
            raise ProvenanceError(f"{path}: not a policy file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ProvenanceError(f"{path}: unsupported format version {version}")
        head = json.loads(fh.read(hlen))
        table = np.load(fh, allow_pickle=False) if head["has_table"] else None
    stored = GameConfig.from_dict(head["config"])
    if stored.config_hash() != head["config_hash"]:
        raise ProvenanceError(f"{path}: header config does not match its hash")
    if config is not None and config.config_hash() != head["config_hash"]:
        raise ProvenanceError(
            f"{path}: made under config {head['config_hash']}, "
            f"refusing to use it with config {config.config_hash()}")
    daily = DailyBound(**head["daily_bound"]) if head["daily_bound"] else None
    return Policy(head["role"], head["kind"], head["params"], table, daily)
