"""Best-response discovery and defender retraining over a growing attacker pool."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .game_env import GameConfig, simulate_runs
from .metrics import summarize
from .policies import DailyBound, Policy
from .rl import Aggregation, Hyperparams, TrainingError, train_attacker_best_response, train_defender

log = logging.getLogger(__name__)


@dataclass
class MatchupStats:
    mean_sup_cost: float
    proportions: np.ndarray
    worst_max_backlog: int
    runs: int
    seed: int
    sup_costs: np.ndarray = field(repr=False)
    run_fractions: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"mean_sup_cost": self.mean_sup_cost,
                "proportions": [float(p) for p in self.proportions],
                "worst_max_backlog": self.worst_max_backlog,
                "runs": self.runs, "seed": self.seed}


def evaluate_matchup(defender: Policy, attacker: Policy, config: GameConfig, runs: int = 500,
                     seed: int = 0, jobs: int = 1, which: str = "post") -> MatchupStats:
    if runs < 1:
        raise ValueError("runs must be >= 1")
    rs = simulate_runs(defender, attacker, config, runs, seed=seed, jobs=jobs)
    st = summarize(rs, config, which)
    return MatchupStats(st.mean_sup_cost, st.proportions, st.worst_max_backlog, runs, seed,
                        st.sup_costs, st.run_fractions)


@dataclass
class PolicyPool:
    attackers: list[Policy] = field(default_factory=list)
    defenders: list[Policy] = field(default_factory=list)
    matrix: dict = field(default_factory=dict)  # (defender idx, attacker idx) -> MatchupStats

    def add_attacker(self, p: Policy) -> int:
        p.check_role("attacker")
        self.attackers.append(p)
        return len(self.attackers) - 1

    def add_defender(self, p: Policy) -> int:
        p.check_role("defender")
        self.defenders.append(p)
        return len(self.defenders) - 1

    def evaluate(self, config: GameConfig, runs: int, seed: int, jobs: int = 1,
                 defender: int | None = None) -> None:
        rows = range(len(self.defenders)) if defender is None else [defender]
        for i in rows:
            for j, att in enumerate(self.attackers):
                if (i, j) not in self.matrix:
                    self.matrix[i, j] = evaluate_matchup(self.defenders[i], att, config, runs,
                                                         seed, jobs)

    def sup_matrix(self) -> np.ndarray:
        m = np.full((len(self.defenders), len(self.attackers)), np.nan)
        for (i, j), st in self.matrix.items():
            m[i, j] = st.mean_sup_cost
        return m

    def worst_attacker(self, defender: int) -> tuple[int, MatchupStats]:
        cells = [(j, self.matrix[defender, j]) for j in range(len(self.attackers))]
        return max(cells, key=lambda c: (c[1].mean_sup_cost, -c[0]))

    def manifest(self) -> dict:
        return {"attackers": [p.manifest() for p in self.attackers],
                "defenders": [p.manifest() for p in self.defenders],
                "matrix": {f"{i},{j}": st.to_dict() for (i, j), st in sorted(self.matrix.items())}}


@dataclass
class DoubleOracleResult:
    defender: Policy
    pool: PolicyPool
    log: list[dict]
    stopped_early: bool


def _seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=keys).generate_state(1, np.uint32)[0])


def run_double_oracle(config: GameConfig, initial_defender: Policy | None,
                      initial_attackers: Sequence[Policy], iterations: int,
                      improvement_threshold: float = 0.05,
                      defender_hyper: Hyperparams = Hyperparams(),
                      attacker_hyper: Hyperparams = Hyperparams(),
                      defender_agg: Aggregation | None = None,
                      attacker_agg: Aggregation | None = None, eval_runs: int = 500,
                      seed: int = 0, weights: Sequence[float] | None = None, jobs: int = 1,
                      log_path: str | Path | None = None,
                      attacker_bounds: Sequence[DailyBound | None] = (None,),
                      select: str = "last") -> DoubleOracleResult:
    """Alternate attacker best responses and defender retraining.

    Each iteration trains one best response per entry of ``attacker_bounds``
    (``None`` is the unbounded attacker). The defender is retrained from
    scratch on a mixture over the whole attacker pool (uniform unless
    ``weights`` gives one weight per attacker ever added). The loop stops
    once no fresh best response beats the strongest pool attacker by at
    least ``improvement_threshold``.

    ``select="minimax"`` returns, instead of the last defender, the one whose
    worst pool attacker is least harmful once every defender has been
    evaluated against the final pool.
    """
    if select not in ("last", "minimax"):
        raise ValueError("select must be 'last' or 'minimax'")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not initial_attackers:
        raise ValueError("need at least one initial attacker")
    pool = PolicyPool()
    for a in initial_attackers:
        pool.add_attacker(a)
    defender = initial_defender
    if defender is None:
        mix = [(a, 1.0 / len(pool.attackers)) for a in pool.attackers]
        defender = train_defender(config, mix, defender_hyper, defender_agg, _seed(seed, 0, 0))
    cur = pool.add_defender(defender)
    eval_seed = _seed(seed, 1 << 20)
    records: list[dict] = []
    fh = open(log_path, "w") if log_path is not None else None
    stopped = False
    try:
        for it in range(1, iterations + 1):
            rec: dict = {"iteration": it, "defender_index": cur, "eval_seed": eval_seed}
            try:
                pool.evaluate(config, eval_runs, eval_seed, jobs, defender=cur)
                best_j, best = pool.worst_attacker(cur)
                cands = []
                for vi, bound in enumerate(attacker_bounds):
                    att_seed = _seed(seed, it, 1, vi)
                    br = train_attacker_best_response(config, defender, attacker_hyper, attacker_agg,
                                                      att_seed, daily=bound)
                    st = evaluate_matchup(defender, br, config, eval_runs, eval_seed, jobs)
                    cands.append((st.mean_sup_cost - best.mean_sup_cost, vi, att_seed, br, st))
                harmful = [c for c in cands if c[0] >= improvement_threshold]
                gain, _, att_seed, br, br_stats = max(cands, key=lambda c: (c[0], -c[1]))
                rec.update({
                    "attacker_seed": att_seed,
                    "attacker": br.manifest(),
                    "pool_worst_attacker": best_j,
                    "pool_worst_sup_cost": best.mean_sup_cost,
                    "pre_sup_cost": br_stats.mean_sup_cost,
                    "pre_proportions": [float(p) for p in br_stats.proportions],
                    "gain": gain,
                    "candidates": [{"bound": None if attacker_bounds[vi] is None
                                    else attacker_bounds[vi].per_day_limit,
                                    "seed": sd, "sup_cost": st.mean_sup_cost, "gain": g}
                                   for g, vi, sd, _, st in cands],
                })
                if not harmful:
                    rec["stop"] = "no new harmful attacker"
                    stopped = True
                else:
                    for _, _, _, p, st in harmful:
                        j = pool.add_attacker(p)
                        pool.matrix[cur, j] = st
                    j = pool.attackers.index(br)
                    n_att = len(pool.attackers)
                    if weights is None:
                        w = np.full(n_att, 1.0 / n_att)
                    else:
                        w = np.asarray(weights[:n_att], dtype=np.float64)
                        w = w / w.sum()
                    def_seed = _seed(seed, it, 0)
                    defender = train_defender(config, list(zip(pool.attackers, w)),
                                              defender_hyper, defender_agg, def_seed)
                    cur = pool.add_defender(defender)
                    pool.evaluate(config, eval_runs, eval_seed, jobs, defender=cur)
                    post = pool.matrix[cur, j]
                    _, worst_after = pool.worst_attacker(cur)
                    rec.update({
                        "defender_seed": def_seed,
                        "post_sup_cost": post.mean_sup_cost,
                        "post_proportions": [float(p) for p in post.proportions],
                        "pool_worst_after": worst_after.mean_sup_cost,
                    })
            except TrainingError as exc:
                rec["error"] = str(exc)
                records.append(rec)
                if fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
                raise
            records.append(rec)
            log.info("double oracle iteration %d: %s", it,
                     {k: rec[k] for k in ("pre_sup_cost", "gain", "post_sup_cost") if k in rec})
            if fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                fh.flush()
            if stopped:
                break
    finally:
        if fh:
            fh.close()
    if select == "minimax":
        pool.evaluate(config, eval_runs, eval_seed, jobs)
        worst = [pool.worst_attacker(i)[1].mean_sup_cost for i in range(len(pool.defenders))]
        defender = pool.defenders[int(np.argmin(worst))]
    return DoubleOracleResult(defender, pool, records, stopped)


def strongest_response(config: GameConfig, defender: Policy, hyper: Hyperparams = Hyperparams(),
                       agg: Aggregation | None = None, seeds: Sequence[int] = (0,),
                       daily: DailyBound | None = None, eval_runs: int = 500, eval_seed: int = 0,
                       jobs: int = 1) -> tuple[Policy, MatchupStats]:
    """Train one best response per seed and keep the most harmful (first on ties)."""
    if not seeds:
        raise ValueError("need at least one seed")
    best = None
    for sd in seeds:
        br = train_attacker_best_response(config, defender, hyper, agg, int(sd), daily=daily)
        st = evaluate_matchup(defender, br, config, eval_runs, eval_seed, jobs)
        if best is None or st.mean_sup_cost > best[1].mean_sup_cost:
            best = (br, st)
    return best


def chunk_sweep_attack(defender: Policy, config: GameConfig, chunk_sizes: Sequence[int],
                       hyper: Hyperparams = Hyperparams(), agg: Aggregation | None = None,
                       eval_runs: int = 500, seed: int = 0,
                       jobs: int = 1) -> dict[int, tuple[Policy, MatchupStats]]:
    """Best-response attacker per chunk size, each evaluated against ``defender``."""
    out = {}
    for c in chunk_sizes:
        if c < 1 or c > config.attacker_cap:
            raise ValueError(f"chunk {c} outside [1, {config.attacker_cap}]")
        cfg = config.replace(attacker_chunk=int(c))
        br = train_attacker_best_response(cfg, defender, hyper, agg, _seed(seed, int(c)))
        out[int(c)] = (br, evaluate_matchup(defender, br, cfg, eval_runs, seed, jobs))
    return out


def significantly_greater(a: np.ndarray, b: np.ndarray, alpha: float = 0.05) -> tuple[bool, float]:
    """One-sided Welch test of mean(a) > mean(b); degenerate equal samples are not greater."""
    from scipy.stats import ttest_ind

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        return (bool(a.mean() > b.mean()), 0.0 if a.mean() > b.mean() else 1.0)
    p = float(ttest_ind(a, b, equal_var=False, alternative="greater").pvalue)
    return (bool(p < alpha) if math.isfinite(p) else False, p)
