"""Non-learned policies and the packed representation the kernels consume.

A :class:`Policy` is a small immutable description (kind + integer
parameters, optionally an action table).  ``pack_bank`` turns a list of them
into flat arrays so compiled episodes and trainers can dispatch on ``kind``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .game_env import AttackerObservation, DefenderObservation, GameConfig
from .queue_core import poisson_tables

KIND_CODES = {
    "zero": K.K_ZERO,
    "constant": K.K_CONST,
    "s1": K.K_S1,
    "s2": K.K_S2,
    "dump": K.K_DUMP,
    "random": K.K_RANDOM,
    "stochastic": K.K_STOCH,
    "table": None,  # resolved by role
    "schedule": K.K_SCHEDULE,
}
ROLE_KINDS = {
    "defender": {"zero", "constant", "s1", "s2", "random", "table", "schedule"},
    "attacker": {"zero", "constant", "dump", "random", "stochastic", "table", "schedule"},
}
MAX_RATES = K.P_SIZE


@dataclass(frozen=True)
class DailyBound:
    per_day_limit: int
    day_length: int = 24

    def __post_init__(self):
        if self.per_day_limit < 0 or self.day_length < 1:
            raise ValueError("per_day_limit must be >= 0 and day_length >= 1")

    @classmethod
    def from_budget(cls, budget: int, horizon: int, day_length: int = 24) -> "DailyBound":
        """Even split of ``budget`` over the days of the horizon (rounded down)."""
        days = max(1, horizon // day_length)
        return cls(int(budget // days), day_length)


@dataclass(frozen=True)
class RulePolicyConfig:
    threshold: int
    aggressive: bool = False
    chunk: int = 60
    per_hour_cap: int = 2400
    anchor_low: int = 1175
    anchor_high: int = 4350

    def __post_init__(self):
        if not self.anchor_low <= self.threshold <= self.anchor_high:
            raise ValueError(
                f"threshold {self.threshold} outside [{self.anchor_low}, {self.anchor_high}]")

    @classmethod
    def for_config(cls, config: GameConfig, threshold: int | None = None,
                   aggressive: bool = False) -> "RulePolicyConfig":
        if threshold is None:
            threshold = two_hour_backlog(config)
        return cls(int(threshold), aggressive, config.defender_chunk, config.per_hour_cap,
                   int(round(config.cost_anchor_low)), int(round(config.cost_anchor_high)))


def two_hour_backlog(config: GameConfig) -> int:
    """Backlog at an AvgTTA of 2 hours (rounded down), 2233 at paper scale."""
    lo, hi = config.cost_anchor_low, config.cost_anchor_high
    return int(math.floor(lo + (hi - lo) / 3.0))


@dataclass(frozen=True, eq=False)
class Policy:
    role: str
    kind: str
    params: dict = field(default_factory=dict)
    table: np.ndarray | None = None
    daily: DailyBound | None = None

    def __post_init__(self):
        if self.role not in ROLE_KINDS:
            raise ValueError(f"unknown role {self.role!r}")
        if self.kind not in ROLE_KINDS[self.role]:
            raise ValueError(f"kind {self.kind!r} is not available to the {self.role}")

    def check_role(self, role: str) -> None:
        if self.role != role:
            raise ValueError(f"expected a {role} policy, got a {self.role} policy ({self.kind})")

    @property
    def code(self) -> int:
        if self.kind == "table":
            return K.K_TABLE_DEF if self.role == "defender" else K.K_TABLE_ATT
        return KIND_CODES[self.kind]

    def manifest(self) -> dict:
        m = {"role": self.role, "kind": self.kind, "params": dict(self.params)}
        if self.daily is not None:
            m["daily_bound"] = {"per_day_limit": self.daily.per_day_limit,
                                "day_length": self.daily.day_length}
        if self.table is not None:
            m["table_sha256"] = hashlib.sha256(np.ascontiguousarray(self.table).tobytes()).hexdigest()[:16]
        return m

    def describe(self) -> str:
        p = ",".join(f"{k}={v}" for k, v in sorted(self.params.items())
                     if k not in ("aggregation",))
        s = f"{self.role}:{self.kind}" + (f"({p})" if p else "")
        if self.daily is not None:
            s += f"[daily<={self.daily.per_day_limit}]"
        return s

    def with_daily(self, bound: DailyBound | None) -> "Policy":
        return Policy(self.role, self.kind, dict(self.params), self.table, bound)

    def start(self, config: GameConfig, rng=None) -> "PolicyRunner":
        return PolicyRunner(self, config, rng)


class PolicyRunner:
    """Per-episode decision maker (owns the daily-bound spend counter)."""

    def __init__(self, policy: Policy, config: GameConfig, rng=None):
        from .rng import Rng

        self.policy = policy
        self.bank = pack_bank([policy], config)
        self.rng = rng if rng is not None else Rng(0, 99)
        self.spent = np.zeros(1, dtype=np.int64)
        self.hour = 0

    def decide(self, obs) -> int:
        if isinstance(obs, DefenderObservation):
            self.policy.check_role("defender")
            b, n, x, y = obs.backlog, obs.remaining_hours, obs.defender_remaining, 0
        elif isinstance(obs, AttackerObservation):
            self.policy.check_role("attacker")
            s = obs.state
            b, n, x, y = s.b, s.n, s.x, s.y
        else:
            raise TypeError(f"unsupported observation {type(obs).__name__}")
        v = K.policy_act(self.bank, 0, self.policy.role == "attacker", b, n, x, y,
                         self.hour, self.rng.state, self.spent)
        self.hour += 1
        return int(v)


# --------------------------------------------------------------------------
# constructors
# --------------------------------------------------------------------------

def zero_policy(role: str) -> Policy:
    return Policy(role, "zero")


def constant_policy(role: str, amount: int) -> Policy:
    return Policy(role, "constant", {"amount": int(amount)})


def full_spend_defender(config: GameConfig) -> Policy:
    return constant_policy("defender", config.per_hour_cap)


def rule_policy(cfg: RulePolicyConfig) -> Policy:
    return Policy("defender", "s2" if cfg.aggressive else "s1",
                  {"threshold": cfg.threshold, "reset": cfg.anchor_low,
                   "chunk": cfg.chunk, "cap": cfg.per_hour_cap})


def s1_policy(config: GameConfig, threshold: int | None = None) -> Policy:
    return rule_policy(RulePolicyConfig.for_config(config, threshold, aggressive=False))


def s2_policy(config: GameConfig, threshold: int | None = None) -> Policy:
    return rule_policy(RulePolicyConfig.for_config(config, threshold, aggressive=True))


def dump_attacker(config: GameConfig) -> Policy:
    return Policy("attacker", "dump", {"cap": config.per_hour_cap})


def random_policy(role: str, config: GameConfig) -> Policy:
    if role == "defender":
        chunk, cap = config.defender_chunk, config.per_hour_cap
    else:
        chunk, cap = config.attacker_chunk, config.attacker_cap
    return Policy(role, "random", {"chunk": chunk, "cap": cap})


def schedule_policy(role: str, amounts: Sequence[int]) -> Policy:
    """Open-loop per-hour amounts (hour 1 first); zero after the schedule."""
    return Policy(role, "schedule", {"hours": len(amounts)},
                  table=np.asarray(amounts, dtype=np.int64))


def stochastic_rate_attacker(rates: Sequence[float], probs: Sequence[float],
                             config: GameConfig, chunk: int | None = None) -> Policy:
    """Each hour: pick an extra arrival rate, inject a Poisson draw of that
    rate floored to the attacker chunk (and capped per hour)."""
    rates = [float(r) for r in rates]
    probs = [float(p) for p in probs]
    if not rates or len(rates) != len(probs) or len(rates) > MAX_RATES:
        raise ValueError(f"need 1..{MAX_RATES} rates with matching probabilities")
    if any(r < 0 or not math.isfinite(r) for r in rates):
        raise ValueError("extra rates must be finite and >= 0")
    if any(p < 0 for p in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
        raise ValueError("probabilities must be nonnegative and sum to 1")
    return Policy("attacker", "stochastic",
                  {"rates": rates, "probs": probs,
                   "chunk": chunk or config.attacker_chunk, "cap": config.attacker_cap})


def default_stochastic_attacker(config: GameConfig) -> Policy:
    """Regenerated training opponent: mostly quiet hours, occasional surges
    worth a fraction of the per-hour cap."""
    e = config.per_hour_cap
    return stochastic_rate_attacker([0.0, 0.25 * e, 0.5 * e, 1.0 * e],
                                    [0.7, 0.15, 0.1, 0.05], config)


def daily_bounded(inner: Policy, bound: DailyBound) -> Policy:
    return inner.with_daily(bound)


# --------------------------------------------------------------------------
# scalar decisions (public helpers around the kernels)
# --------------------------------------------------------------------------

def s1_decide(obs: DefenderObservation, cfg: RulePolicyConfig) -> int:
    return int(K.rule_amount(obs.backlog, cfg.threshold, cfg.anchor_low, False,
                             cfg.chunk, cfg.per_hour_cap))


def s2_decide(obs: DefenderObservation, cfg: RulePolicyConfig) -> int:
    return int(K.rule_amount(obs.backlog, cfg.threshold, cfg.anchor_low, True,
                             cfg.chunk, cfg.per_hour_cap))


def dump_attacker_decide(obs: AttackerObservation, config: GameConfig) -> int:
    return config.per_hour_cap if obs.state.y > 0 else 0


# --------------------------------------------------------------------------
# packing
# --------------------------------------------------------------------------

def _table_dims(agg: dict, config: GameConfig, role: str) -> tuple[int, int, int, int]:
    db = agg["backlog_cap"] // agg["backlog_bin"] + 1
    dh = config.horizon // agg["hours_bin"] + 1
    dx = config.defender_budget // agg["budget_bin"] + 1
    dy = config.attacker_budget // agg["budget_bin"] + 1 if role == "attacker" else 1
    return db, dh, dx, dy


def _rate_tables(rate: float):
    if rate <= 0:
        return np.ones(1), np.zeros(1)
    return poisson_tables(rate)


def pack_bank(policies: Sequence[Policy], config: GameConfig) -> tuple:
    """Flatten policies into ``(kinds, pint, pflt, toff, tab, acdf, asf)``."""
    n = len(policies)
    kinds = np.zeros(n, dtype=np.int64)
    pint = np.zeros((n, K.P_SIZE), dtype=np.int64)
    pflt = np.ones((n, K.P_SIZE), dtype=np.float64)
    pint[:, K.P_DAYLIM] = -1
    pint[:, K.P_DAYLEN] = 24
    tables = []
    rate_tabs: list[list] = []
    for i, pol in enumerate(policies):
        kinds[i] = pol.code
        prm = pol.params
        default_chunk = config.defender_chunk if pol.role == "defender" else config.attacker_chunk
        default_cap = config.per_hour_cap if pol.role == "defender" else config.attacker_cap
        pint[i, K.P_CHUNK] = prm.get("chunk", default_chunk)
        pint[i, K.P_CAP] = prm.get("cap", default_cap)
        pint[i, K.P_AMOUNT] = prm.get("amount", 0)
        pint[i, K.P_THRESH] = prm.get("threshold", 0)
        pint[i, K.P_RESET] = prm.get("reset", int(round(config.cost_anchor_low)))
        if pol.daily is not None:
            pint[i, K.P_DAYLIM] = pol.daily.per_day_limit
            pint[i, K.P_DAYLEN] = pol.daily.day_length
        tabs = []
        if pol.kind == "stochastic":
            rates = prm["rates"]
            pint[i, K.P_NRATES] = len(rates)
            cum = np.cumsum(prm["probs"])
            cum[-1] = 1.0
            pflt[i, :len(cum)] = cum
            tabs = [_rate_tables(r) for r in rates]
        rate_tabs.append(tabs)
        if pol.kind == "table":
            agg = prm["aggregation"]
            dims = _table_dims(agg, config, pol.role)
            if list(dims) != list(prm["dims"]) or len(pol.table) != int(np.prod(dims)):
                raise ValueError(
                    f"table policy grid {prm['dims']} does not fit this config (expects {list(dims)})")
            pint[i, K.P_BBIN] = agg["backlog_bin"]
            pint[i, K.P_BCAP] = agg["backlog_cap"]
            pint[i, K.P_XBIN] = agg["budget_bin"]
            pint[i, K.P_HBIN] = agg["hours_bin"]
            pint[i, K.P_DIMB], pint[i, K.P_DIMH], pint[i, K.P_DIMX], pint[i, K.P_DIMY] = prm["dims"]
        tables.append(pol.table if pol.table is not None else np.zeros(0, dtype=np.int64))
    toff = np.zeros(n + 1, dtype=np.int64)
    toff[1:] = np.cumsum([len(t) for t in tables])
    tab = np.concatenate(tables).astype(np.int64) if toff[-1] else np.zeros(1, dtype=np.int64)
    nr = max([len(t) for t in rate_tabs] + [1])
    kk = max([len(c) for t in rate_tabs for c, _ in t] + [1])
    acdf = np.ones((n, nr, kk), dtype=np.float64)
    asf = np.zeros((n, nr, kk), dtype=np.float64)
    for i, tabs in enumerate(rate_tabs):
        for r, (c, s) in enumerate(tabs):
            acdf[i, r, :len(c)] = c
            asf[i, r, :len(s)] = s
    return (kinds, pint, pflt, toff, tab, acdf, asf)
