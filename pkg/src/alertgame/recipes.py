"""Named experiments: which matchups to play, how to obtain the policies, what to write.

Every random choice in a recipe derives from one master seed.  Stage seeds
are ``SeedSequence(master, spawn_key=(stage, ...))`` words (see ``stage_seed``);
evaluation run ``r`` of a matchup uses the per-run split of the evaluation
seed done by ``simulate_runs``.  The manifest records the resolved config,
the plan and every stage seed, so ``run_recipe`` on a manifest reproduces
the bundle byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from ._accel import BACKEND
from .bounds import (
    bound_report, busy_cycle_stats, dump_attack_analysis, paired_s1_guarantee_check,
)
from .double_oracle import (
    MatchupStats, run_double_oracle, strongest_response,
)
from .game_env import DisturbanceModel, GameConfig, QueueParams, simulate_runs
from .metrics import summarize, svg_donut, svg_trace, write_proportions_csv
from .policies import (
    DailyBound, Policy, default_stochastic_attacker, dump_attacker, full_spend_defender,
    random_policy, s1_policy, s2_policy, zero_policy,
)
from .queue_core import natural_arrays
from .rl import Aggregation, Hyperparams, load_policy, save_policy, train_defender

log = logging.getLogger(__name__)

# stage ids mixed into the master seed
STAGE_DEFENDER, STAGE_DO, STAGE_BR, STAGE_EVAL, STAGE_CHECKS = range(5)


def stage_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=keys).generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class TrainingPlan:
    """Knobs of every learning stage a recipe may run."""

    defender_episodes: int = 1_000_000
    attacker_episodes: int = 1_000_000
    defender_exploring_starts: float = 0.5
    attacker_exploring_starts: float = 0.0
    do_iterations: int = 6
    improvement_threshold: float = 0.05
    br_seeds: int = 2
    eval_runs: int = 500
    defender_hours_bin: int = 12
    defender_budget_bin: int = 300

    def __post_init__(self):
        if min(self.do_iterations, self.br_seeds, self.eval_runs) < 1:
            raise ValueError("do_iterations, br_seeds and eval_runs must be >= 1")

    def defender_hyper(self) -> Hyperparams:
        return Hyperparams(episodes=self.defender_episodes,
                           exploring_starts=self.defender_exploring_starts)

    def attacker_hyper(self) -> Hyperparams:
        return Hyperparams(episodes=self.attacker_episodes,
                           exploring_starts=self.attacker_exploring_starts)

    def defender_agg(self, config: GameConfig) -> Aggregation:
        base = Aggregation.for_config(config)
        return dataclasses.replace(base, hours_bin=self.defender_hours_bin,
                                   budget_bin=self.defender_budget_bin)


@dataclass(frozen=True)
class Matchup:
    label: str
    defender: str  # zero | s1 | s2 | full-spend | random | naive | robust | file
    attacker: str  # zero | dump | stochastic | random | br | br-daily | file
    budget_factor: float = 1.0
    attacker_chunk: int | None = None
    respond_to: str | None = None  # defender a learned attacker is trained against


@dataclass(frozen=True)
class ExperimentRecipe:
    name: str
    description: str
    matchups: tuple[Matchup, ...] = ()
    runs: int = 500
    seed: int = 0
    scale: str = "desk"
    overrides: dict = field(default_factory=dict)
    extra: str | None = None  # do-log | chunk-sweep | checks

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.scale not in ("paper", "desk"):
            raise ValueError("scale must be 'paper' or 'desk'")
        for m in self.matchups:
            if m.defender not in DEFENDER_SPECS:
                raise ValueError(f"{self.name}: unknown defender spec {m.defender!r}")
            if m.attacker not in ATTACKER_SPECS:
                raise ValueError(f"{self.name}: unknown attacker spec {m.attacker!r}")

    @property
    def needs_training(self) -> bool:
        learned = {"naive", "robust", "br", "br-daily"}
        return self.extra in ("do-log", "chunk-sweep") or any(
            m.defender in learned or m.attacker in learned for m in self.matchups)


DEFENDER_SPECS = {"zero", "s1", "s2", "full-spend", "random", "naive", "robust", "file"}
ATTACKER_SPECS = {"zero", "dump", "stochastic", "random", "br", "br-daily", "file"}

_M = Matchup
RECIPES: dict[str, ExperimentRecipe] = {r.name: r for r in [
    ExperimentRecipe(
        "equal-budget-daily-bound",
        "robust learned defender vs a daily-bounded best response, Y = X",
        (_M("robust-vs-br-daily", "robust", "br-daily"),
         _M("zero-vs-same", "zero", "br-daily", respond_to="robust"))),
    ExperimentRecipe(
        "equal-budget-unbounded",
        "robust learned defender vs an unbounded best response, Y = X",
        (_M("robust-vs-br", "robust", "br"), _M("zero-vs-same", "zero", "br", respond_to="robust"))),
    ExperimentRecipe(
        "ten-percent-extra",
        "attacker with 10% more budget under a daily bound, next to the Y = X case",
        (_M("robust-vs-br-daily-1.1x", "robust", "br-daily", 1.1),
         _M("robust-vs-br-daily-1.0x", "robust", "br-daily", 1.0))),
    ExperimentRecipe(
        "s1-vs-unbounded", "threshold rule S1 vs its own unbounded best response",
        (_M("s1-vs-br", "s1", "br"),)),
    ExperimentRecipe(
        "s2-vs-unbounded", "aggressive rule S2 vs its own unbounded best response",
        (_M("s2-vs-br", "s2", "br"),)),
    ExperimentRecipe(
        "chunk30-attack",
        "defender trained against chunk-60 attacks only, attacked with chunks 60 and 30",
        (_M("naive-vs-br-chunk60", "naive", "br", attacker_chunk=60),
         _M("naive-vs-br-chunk30", "naive", "br", attacker_chunk=30))),
    ExperimentRecipe(
        "double-oracle-defense",
        "double-oracle training log; the result faces fresh chunk-60 and chunk-30 responses",
        (_M("robust-vs-br-chunk60", "robust", "br", attacker_chunk=60),
         _M("robust-vs-br-chunk30", "robust", "br", attacker_chunk=30)),
        extra="do-log"),
    ExperimentRecipe(
        "chunk-sweep", "robust defender against best responses at chunks 1, 10, 30 and 60",
        tuple(_M(f"robust-vs-br-chunk{c}", "robust", "br", attacker_chunk=c)
              for c in (60, 30, 10, 1))),
    ExperimentRecipe(
        "s1-s2-chunk-attack", "rule defenders against chunk-30 best responses",
        (_M("s1-vs-br-chunk30", "s1", "br", attacker_chunk=30),
         _M("s2-vs-br-chunk30", "s2", "br", attacker_chunk=30))),
    ExperimentRecipe(
        "theorem1-checks",
        "closed-form bounds, the dump attack against every rule defender, the paired S1 "
        "check and busy-cycle tails",
        tuple(_M(f"{d}-vs-dump", d, "dump", budget_factor=1.0 + 4800 / 28800)
              for d in ("zero", "s1", "s2", "full-spend")),
        scale="paper", extra="checks"),
]}


def list_recipes() -> list[ExperimentRecipe]:
    return [RECIPES[k] for k in sorted(RECIPES)]


def base_config(scale: str) -> GameConfig:
    return GameConfig.desk() if scale == "desk" else GameConfig.paper()


# --------------------------------------------------------------------------
# flat key = value config files
# --------------------------------------------------------------------------

class ConfigError(ValueError):
    """Bad recipe, config file or flag combination."""


CONFIG_KEYS: dict[str, tuple[str, Callable]] = {
    "lambda_per_hour": ("queue.lambda_nominal", float),
    "mu_per_hour": ("queue.mu_nominal", float),
    "service_disturbance": ("queue.disturbance", str),
    "horizon_hours": ("horizon", int),
    "defender_budget_inspections": ("defender_budget", int),
    "attacker_budget_alerts": ("attacker_budget", int),
    "per_hour_cap_alerts": ("per_hour_cap", int),
    "defender_chunk_inspections": ("defender_chunk", int),
    "attacker_chunk_alerts": ("attacker_chunk", int),
    "cost_anchor_low_alerts": ("cost_anchor_low", float),
    "cost_anchor_high_alerts": ("cost_anchor_high", float),
    "initial_backlog_alerts": ("initial_backlog", int),
    "shaping_weight": ("shaping_weight", float),
    "attacker_uncapped": ("attacker_uncapped", lambda v: _bool(v)),
    "defender_episodes": ("plan.defender_episodes", int),
    "attacker_episodes": ("plan.attacker_episodes", int),
    "defender_exploring_starts_fraction": ("plan.defender_exploring_starts", float),
    "attacker_exploring_starts_fraction": ("plan.attacker_exploring_starts", float),
    "double_oracle_iterations": ("plan.do_iterations", int),
    "improvement_threshold_cost": ("plan.improvement_threshold", float),
    "best_response_seeds": ("plan.br_seeds", int),
    "eval_runs": ("plan.eval_runs", int),
}


def _bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_config_text(text: str) -> dict[str, object]:
    """``key = value`` lines, ``#`` comments; returns typed values by key."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key][1](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return out


def apply_overrides(config: GameConfig, plan: TrainingPlan,
                    values: dict[str, object]) -> tuple[GameConfig, TrainingPlan]:
    top, queue, plan_kw = {}, {}, {}
    for key, value in values.items():
        target = CONFIG_KEYS[key][0]
        if target.startswith("plan."):
            plan_kw[target[5:]] = value
        elif target.startswith("queue."):
            queue[target[6:]] = value
        else:
            top[target] = value
    try:
        if "disturbance" in queue:
            mode = queue.pop("disturbance")
            queue["disturbance"] = (DisturbanceModel.fixed() if mode == "fixed"
                                    else DisturbanceModel() if mode == "hourly" else None)
            if queue["disturbance"] is None:
                raise ValueError(f"service_disturbance must be fixed or hourly, not {mode!r}")
        if queue:
            top["queue"] = dataclasses.replace(config.queue, **queue)
        return config.replace(**top), dataclasses.replace(plan, **plan_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

@dataclass
class Bundle:
    out: Path
    stats: dict[str, MatchupStats]
    manifest: dict
    extra: dict = field(default_factory=dict)


class _Context:
    """Caches learned policies so a recipe trains each of them once."""

    def __init__(self, recipe: ExperimentRecipe, config: GameConfig, plan: TrainingPlan,
                 seed: int, jobs: int, defender_file: str | None, attacker_file: str | None):
        self.recipe, self.config, self.plan = recipe, config, plan
        self.seed, self.jobs = seed, jobs
        self.defender_file, self.attacker_file = defender_file, attacker_file
        self.cache: dict = {}
        self.seeds: dict[str, int] = {}
        self.do_result = None

    def _seed(self, name: str, *keys: int) -> int:
        s = stage_seed(self.seed, *keys)
        self.seeds[name] = s
        return s

    def defender(self, spec: str) -> Policy:
        if spec in self.cache:
            return self.cache[spec]
        cfg, plan = self.config, self.plan
        if spec == "zero":
            pol = zero_policy("defender")
        elif spec == "s1":
            pol = s1_policy(cfg)
        elif spec == "s2":
            pol = s2_policy(cfg)
        elif spec == "full-spend":
            pol = full_spend_defender(cfg)
        elif spec == "random":
            pol = random_policy("defender", cfg)
        elif spec == "file":
            if not self.defender_file:
                raise ConfigError("this recipe needs --defender FILE")
            pol = load_policy(self.defender_file, cfg)
            pol.check_role("defender")
        elif spec == "naive":
            pol = train_defender(cfg, [(default_stochastic_attacker(cfg), 1.0)],
                                 plan.defender_hyper(), plan.defender_agg(cfg),
                                 self._seed("naive_defender", STAGE_DEFENDER))
        elif spec == "robust":
            pol = robust_defender(cfg, plan, self._seed("double_oracle", STAGE_DO), self.jobs,
                                  context=self)
        else:
            raise ConfigError(f"unknown defender spec {spec!r}")
        self.cache[spec] = pol
        return pol

    def attacker(self, spec: str, defender_spec: str, cfg: GameConfig) -> Policy:
        key = (spec, defender_spec, cfg.config_hash())
        if key in self.cache:
            return self.cache[key]
        if spec == "zero":
            pol = zero_policy("attacker")
        elif spec == "dump":
            pol = dump_attacker(cfg)
        elif spec == "stochastic":
            pol = default_stochastic_attacker(cfg)
        elif spec == "random":
            pol = random_policy("attacker", cfg)
        elif spec == "file":
            if not self.attacker_file:
                raise ConfigError("this recipe needs --attacker FILE")
            pol = load_policy(self.attacker_file, cfg)
            pol.check_role("attacker")
        else:
            target = self.defender(defender_spec)
            daily = DailyBound.from_budget(cfg.attacker_budget, cfg.horizon) \
                if spec == "br-daily" else None
            n = len([k for k in self.seeds if k.startswith("br:")])
            base = self._seed(f"br:{spec}:{defender_spec}:{cfg.config_hash()}", STAGE_BR, n)
            seeds = [stage_seed(base, k) for k in range(self.plan.br_seeds)]
            pol, _ = strongest_response(cfg, target, self.plan.attacker_hyper(), None, seeds,
                                        daily, self.plan.eval_runs,
                                        stage_seed(base, 1 << 16), self.jobs)
        self.cache[key] = pol
        return pol


def robust_defender(config: GameConfig, plan: TrainingPlan, seed: int, jobs: int = 1,
                    log_path: str | Path | None = None, context: _Context | None = None) -> Policy:
    """Double oracle from the stochastic attacker with unbounded and daily-bounded responses."""
    daily = DailyBound.from_budget(config.attacker_budget, config.horizon)
    res = run_double_oracle(config, None, [default_stochastic_attacker(config)],
                            plan.do_iterations, plan.improvement_threshold,
                            plan.defender_hyper(), plan.attacker_hyper(),
                            plan.defender_agg(config), None, plan.eval_runs, seed, jobs=jobs,
                            log_path=log_path, attacker_bounds=(None, daily), select="minimax")
    if context is not None:
        context.do_result = res
    return res.defender


def _matchup_config(base: GameConfig, m: Matchup) -> GameConfig:
    cfg = base
    if m.budget_factor != 1.0:
        cfg = cfg.replace(attacker_budget=int(round(base.defender_budget * m.budget_factor)))
    if m.attacker_chunk is not None:
        cfg = cfg.replace(attacker_chunk=m.attacker_chunk)
    return cfg


def run_recipe(recipe: ExperimentRecipe, out: str | Path, config: GameConfig | None = None,
               plan: TrainingPlan = TrainingPlan(), seed: int | None = None,
               runs: int | None = None, jobs: int = 1, defender_file: str | None = None,
               attacker_file: str | None = None, argv: list[str] | None = None) -> Bundle:
    """Train what the recipe needs, evaluate its matchups and write the bundle to ``out``."""
    config = config or base_config(recipe.scale)
    seed = recipe.seed if seed is None else int(seed)
    runs = recipe.runs if runs is None else int(runs)
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    if recipe.needs_training and recipe.scale == "paper":
        raise ConfigError(f"{recipe.name} trains policies and is only available at desk scale")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    ctx = _Context(recipe, config, plan, seed, jobs, defender_file, attacker_file)
    if recipe.extra == "do-log" and "robust" not in ctx.cache:
        ctx.cache["robust"] = robust_defender(config, plan, ctx._seed("double_oracle", STAGE_DO),
                                              jobs, out / "double_oracle.jsonl", ctx)
    stats: dict[str, MatchupStats] = {}
    rows, policies = [], {}
    eval_seed = ctx._seed("evaluation", STAGE_EVAL)
    for m in recipe.matchups:
        cfg = _matchup_config(config, m)
        d = ctx.defender(m.defender)
        a = ctx.attacker(m.attacker, m.respond_to or m.defender, cfg)
        rs = simulate_runs(d, a, cfg, runs, seed=eval_seed, jobs=jobs)
        st = summarize(rs, cfg)
        stats[m.label] = MatchupStats(st.mean_sup_cost, st.proportions, st.worst_max_backlog,
                                      runs, eval_seed, st.sup_costs, st.run_fractions)
        rows.append((m.label, st.proportions, st.mean_sup_cost, st.worst_max_backlog, runs))
        rs.write_csv(out / f"traces_{m.label}.csv")
        (out / f"worst_{m.label}.svg").write_text(
            svg_trace(rs[st.worst_run], cfg, f"{m.label}: worst run {st.worst_run}"))
        (out / f"bands_{m.label}.svg").write_text(svg_donut(st.proportions, m.label))
        for role, pol in (("defender", d), ("attacker", a)):
            name = f"{role}_{m.label}.pol"
            save_policy(pol, cfg, out / name)
            policies[name] = pol.manifest()
    write_proportions_csv(out / "stats.csv", rows)

    extra: dict = {}
    bounds = bound_report(config if recipe.scale == "paper" else GameConfig.paper(
        attacker_budget=33600))
    if recipe.extra == "checks":
        extra = closed_form_checks(ctx._seed("checks", STAGE_CHECKS), runs, jobs)
        bounds["checks"] = extra
    (out / "bounds.json").write_text(json.dumps(bounds, indent=2, sort_keys=True, default=_jsonable))
    if ctx.do_result is not None:
        pool = ctx.do_result.pool.manifest()
        (out / "double_oracle_pool.json").write_text(json.dumps(pool, indent=2, sort_keys=True,
                                                               default=_jsonable))
    manifest = {
        "recipe": recipe.name,
        "description": recipe.description,
        "scale": recipe.scale,
        "seed": seed,
        "runs": runs,
        "jobs": jobs,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "plan": dataclasses.asdict(plan),
        "stage_seeds": ctx.seeds,
        "defender_file": defender_file,
        "attacker_file": attacker_file,
        "policies": policies,
        "stats": {k: v.to_dict() for k, v in stats.items()},
        "version": __version__,
        "backend": BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "argv": argv,
        "seconds": round(time.time() - t0, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                                  default=_jsonable))
    return Bundle(out, stats, manifest, extra)


def closed_form_checks(seed: int, runs: int, jobs: int = 1) -> dict:
    """Monte-Carlo twins of the closed forms at their own configs."""
    out: dict = {}
    paper = GameConfig.paper(attacker_budget=28800 + 4800)
    dump = dump_attack_analysis(paper)
    floor = dump.residual_backlog - 3.0 * (dump.hours * paper.queue.lambda_nominal) ** 0.5
    hits = {}
    for name, d in (("zero", zero_policy("defender")), ("s1", s1_policy(paper)),
                    ("s2", s2_policy(paper)), ("full-spend", full_spend_defender(paper))):
        rs = simulate_runs(d, dump_attacker(paper), paper, runs, seed=stage_seed(seed, 0), jobs=jobs)
        hits[name] = float(np.mean(rs.b_post[:, dump.hours - 1] >= floor))
    out["dump_monte_carlo"] = {"hour": dump.hours, "floor": floor, "fraction_at_or_above": hits}
    scaled = GameConfig.desk(queue=QueueParams(90.0, 100.0, DisturbanceModel.fixed()))
    atts = [dump_attacker(scaled), random_policy("attacker", scaled),
            default_stochastic_attacker(scaled)]
    out["paired_s1_check"] = paired_s1_guarantee_check(scaled, atts, runs, stage_seed(seed, 1),
                                                       jobs=jobs).to_dict()
    _, _, series, _ = natural_arrays(QueueParams(9.0, 10.0, DisturbanceModel.fixed()),
                                     1_000_000, stage_seed(seed, 2), initial_backlog=0)
    bc = busy_cycle_stats(series)
    js = list(range(2, 51))
    out["busy_cycles"] = {"cycles": bc.cycle_count,
                          "tail": dict(zip(js, bc.tails(js).tolist())),
                          "tail_lower_95": {j: bc.tail_lower_confidence(j) for j in js},
                          "within_1_over_j": {j: bc.tail_lower_confidence(j) <= 1.0 / j for j in js}}
    return out


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def recipe_from_manifest(path: str | Path) -> tuple[ExperimentRecipe, dict]:
    m = json.loads(Path(path).read_text())
    if m.get("recipe") not in RECIPES:
        raise ConfigError(f"{path}: unknown recipe {m.get('recipe')!r}")
    return RECIPES[m["recipe"]], m
