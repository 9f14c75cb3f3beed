"""Closed-form checks of the two dump/threshold regimes and their Monte-Carlo twins."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import beta

from .game_env import CostFunction, GameConfig, simulate_runs
from .policies import Policy, s1_policy, two_hour_backlog, zero_policy


@dataclass(frozen=True)
class BoundInputs:
    threshold: float
    horizon: int = 336
    mu: float = 1920.0
    cost: CostFunction = CostFunction(1175.0, 4350.0)
    defender_budget: int = 28800
    attacker_budget: int = 28800

    def __post_init__(self):
        if not self.threshold > 1:
            raise ValueError("threshold B must exceed 1")
        if self.horizon <= 0 or self.mu <= 0:
            raise ValueError("horizon and mu must be positive")

    @classmethod
    def for_config(cls, config: GameConfig, threshold: float) -> "BoundInputs":
        return cls(threshold, config.horizon, config.queue.mu_nominal, config.cost,
                   config.defender_budget, config.attacker_budget)


def theorem1_lower_bound(inp: BoundInputs, check_regime: bool = True) -> float:
    """``(1 + f(B)) (1 - 1/B)^(N mu / B) - 1`` for the threshold rule when Y <= X."""
    if check_regime and inp.attacker_budget > inp.defender_budget:
        raise ValueError("the threshold bound needs attacker budget <= defender budget")
    b = inp.threshold
    p = (1.0 - 1.0 / b) ** (inp.horizon * inp.mu / b)
    return (1.0 + inp.cost(b)) * p - 1.0


def threshold_expected_utility(inp: BoundInputs) -> float:
    """Expected utility from the two-outcome argument itself: ``-f(B)`` with
    probability ``p``, ``-1`` otherwise, i.e. ``(1 - f(B)) p - 1``."""
    b = inp.threshold
    p = (1.0 - 1.0 / b) ** (inp.horizon * inp.mu / b)
    return (1.0 - inp.cost(b)) * p - 1.0


def poisson_lower_tail_bound(lam: float, hours: float, fraction: float) -> float:
    """``P(S <= hours*lam - fraction*lam) <= exp(-fraction^2 lam / (2 hours))``, S ~ Poisson(hours*lam)."""
    if not (math.isfinite(lam) and lam > 0):
        raise ValueError("lambda must be positive and finite")
    if not 0 <= fraction < hours:
        raise ValueError("need 0 <= fraction < hours")
    return math.exp(-(fraction ** 2) * lam / (2.0 * hours))


@dataclass(frozen=True)
class DumpAnalysis:
    hours: int
    dump_total: int
    arrivals_lower: int
    served: int
    absorbed: int
    residual_backlog: int
    cost_of_residual: float
    tail_bound: float
    confidence: float
    utility_bound: float
    guarantee: bool

    def to_dict(self) -> dict:
        return asdict(self)


def dump_regime_margin(config: GameConfig) -> int:
    """Budget surplus the dump argument needs: two full hours of injections."""
    return 2 * config.per_hour_cap


def dump_attack_analysis(config: GameConfig, fraction: float = 0.3) -> DumpAnalysis:
    """Guaranteed residual backlog when the attacker injects E per hour from hour one.

    Arrivals over the dump window are lower-bounded by
    ``floor((hours - fraction) * lambda)`` with the Poisson tail bound as the
    failure probability; everything the attacker sends beyond X and beyond
    what nominal service can absorb is left in the queue.
    """
    x, y, e = config.defender_budget, config.attacker_budget, config.per_hour_cap
    if y - x < dump_regime_margin(config):
        raise ValueError(f"dump regime needs Y - X >= {dump_regime_margin(config)} (got {y - x})")
    lam, mu = config.queue.lambda_nominal, config.queue.mu_nominal
    hours = -(-y // e)
    dump = min(y, hours * e)
    arrivals_lower = math.floor((hours - fraction) * lam)
    served = int(round(hours * mu))
    absorbed = max(0, served - arrivals_lower)
    residual = dump - x - absorbed
    tail = poisson_lower_tail_bound(lam, hours, fraction)
    confidence = 1.0 - tail
    if residual <= 0:
        return DumpAnalysis(hours, dump, arrivals_lower, served, absorbed, 0, 0.0, tail,
                            confidence, 0.0, False)
    fr = config.cost(residual)
    return DumpAnalysis(hours, dump, arrivals_lower, served, absorbed, residual, fr, tail,
                        confidence, -fr * confidence, True)


# --------------------------------------------------------------------------
# busy cycles
# --------------------------------------------------------------------------

@dataclass
class BusyCycleStats:
    cycle_max: np.ndarray
    open_cycle: bool
    open_cycle_max: int = 0

    @property
    def cycle_count(self) -> int:
        return len(self.cycle_max)

    def tail(self, j: int) -> float:
        """Empirical P(cycle max >= j) over closed cycles."""
        if self.cycle_count == 0:
            return 0.0
        return float(np.count_nonzero(self.cycle_max >= j)) / self.cycle_count

    def tails(self, js: Sequence[int]) -> np.ndarray:
        return np.array([self.tail(j) for j in js])

    def tail_lower_confidence(self, j: int, level: float = 0.95) -> float:
        """One-sided Clopper-Pearson lower bound on P(cycle max >= j)."""
        k = int(np.count_nonzero(self.cycle_max >= j))
        if k == 0:
            return 0.0
        return float(beta.ppf(1.0 - level, k, self.cycle_count - k + 1))


def busy_cycle_stats(backlog, initial: int = 0) -> BusyCycleStats:
    """Split an hourly backlog series at its zero hours.

    A cycle is a maximal stretch of positive hours that starts right after a
    zero (``initial`` counts as the hour before the series) and ends at the
    next zero. A stretch still positive at the end is reported as open.
    """
    if len(backlog) and hasattr(backlog[0], "backlog_after"):
        backlog = [h.backlog_after for h in backlog]
    b = np.asarray(backlog, dtype=np.int64)
    if (b < 0).any():
        raise ValueError("backlog must be nonnegative")
    pos = np.concatenate(([initial > 0], b > 0, [False])).astype(np.int8)
    edges = np.diff(pos)
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0]
    closed_ok = np.ones(len(starts), dtype=bool)
    if initial > 0 and len(starts) and starts[0] == 0:
        # the series opened mid-cycle; that first stretch is not a full cycle
        closed_ok[0] = False
    open_cycle = bool(len(b) and b[-1] > 0)
    maxima = []
    open_max = 0
    for k, (s, e) in enumerate(zip(starts, ends)):
        m = int(b[s:e].max())
        if open_cycle and e == len(b):
            open_max = m
            continue
        if closed_ok[k]:
            maxima.append(m)
    return BusyCycleStats(np.array(maxima, dtype=np.int64), open_cycle, open_max)


# --------------------------------------------------------------------------
# paired threshold-rule check
# --------------------------------------------------------------------------

@dataclass
class PairedCheckReport:
    runs: int
    eligible: int
    threshold: int
    violations: list[dict] = field(default_factory=list)
    max_post_allocation: int = 0
    max_spend_excess: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return asdict(self)


def paired_s1_guarantee_check(config: GameConfig, attackers: Sequence[Policy], runs: int = 500,
                              seed: int = 0, threshold: int | None = None,
                              jobs: int = 1) -> PairedCheckReport:
    """Compare S1 against each attacker on the same arrival streams as the attack-free queue.

    Runs whose attack-free backlog stays below B are checked for
    post-allocation backlog <= B + M_d and defender spend <= attacker
    injections + M_d per injection hour.
    """
    if config.queue.disturbance.mode != "fixed":
        raise ValueError("the paired check needs a fixed service rate")
    if config.attacker_budget > config.defender_budget:
        raise ValueError("the paired check needs Y <= X")
    b_thr = two_hour_backlog(config) if threshold is None else int(threshold)
    md = config.defender_chunk
    zero_d, zero_a = zero_policy("defender"), zero_policy("attacker")
    natural = simulate_runs(zero_d, zero_a, config, runs, seed=seed, jobs=jobs)
    eligible = natural.b_post.max(axis=1) < b_thr
    rep = PairedCheckReport(runs * len(attackers), int(eligible.sum()) * len(attackers), b_thr)
    s1 = s1_policy(config, b_thr)
    for ai, att in enumerate(attackers):
        rs = simulate_runs(s1, att, config, runs, seed=seed, jobs=jobs)
        for r in np.nonzero(eligible)[0]:
            t = rs[int(r)]
            post = t.b_pre - t.d_eff
            worst = int(post.max())
            rep.max_post_allocation = max(rep.max_post_allocation, worst)
            if worst > b_thr + md:
                rep.violations.append({"attacker": ai, "run": int(r), "kind": "backlog",
                                       "hour": int(t.hours[int(np.argmax(post))]), "value": worst})
            bursts = int(np.count_nonzero(t.a_eff))
            excess = t.defender_spend - t.attacker_spend
            rep.max_spend_excess = max(rep.max_spend_excess, excess)
            if excess > md * bursts:
                rep.violations.append({"attacker": ai, "run": int(r), "kind": "spend",
                                       "defender": t.defender_spend,
                                       "attacker_spend": t.attacker_spend, "bursts": bursts})
    return rep


def bound_report(config: GameConfig, thresholds: Sequence[float] = (1500.0,)) -> dict:
    """Everything the closed forms say about ``config``, ready for JSON."""
    rep: dict = {"config_hash": config.config_hash()}
    th = []
    for b in thresholds:
        inp = BoundInputs.for_config(config, b)
        th.append({"threshold": b,
                   "formula_value": theorem1_lower_bound(inp, check_regime=False),
                   "two_outcome_value": threshold_expected_utility(inp),
                   "cost_at_threshold": config.cost(b)})
    rep["threshold_rule"] = th
    if config.attacker_budget - config.defender_budget >= dump_regime_margin(config):
        rep["dump_attack"] = dump_attack_analysis(config).to_dict()
    else:
        rep["dump_attack"] = None
    rep["poisson_tail_14h_0.3"] = poisson_lower_tail_bound(config.queue.lambda_nominal, 14, 0.3)
    return rep
