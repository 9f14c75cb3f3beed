"""Command-line driver: ``alertgame --recipe NAME [--config FILE] [--out DIR] ...``.

Exit status: 0 success, 2 bad recipe/config/flags, 3 missing or mismatched
policy file, 4 numerical failure during training.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .recipes import (
    RECIPES, ConfigError, TrainingPlan, apply_overrides, base_config, list_recipes,
    parse_config_text, recipe_from_manifest, run_recipe,
)
from .game_env import GameConfig
from .rl import ProvenanceError, TrainingError

EXIT_OK, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_NUMERIC = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="alertgame", description=__doc__.split("\n")[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--recipe", help="built-in recipe name (see --list-recipes)")
    p.add_argument("--list-recipes", action="store_true", help="print the recipe catalog")
    p.add_argument("--config", help="flat key = value file overriding the scale preset")
    p.add_argument("--scale", choices=("paper", "desk"), help="preset (default: the recipe's)")
    p.add_argument("--seed", type=int, help="master seed (default: the recipe's)")
    p.add_argument("--runs", type=int, help="evaluation runs per matchup")
    p.add_argument("--jobs", type=int, default=1, help="evaluation worker threads")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--defender", help="policy file for recipes with a file defender")
    p.add_argument("--attacker", help="policy file for recipes with a file attacker")
    p.add_argument("--from-manifest", help="re-run the bundle described by a manifest.json")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _catalog() -> str:
    lines = []
    for r in list_recipes():
        tag = "trains" if r.needs_training else "no training"
        lines.append(f"{r.name:26s} [{r.scale}, {tag}] {r.description}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.list_recipes:
        print(_catalog())
        return EXIT_OK
    try:
        if args.from_manifest:
            recipe, m = recipe_from_manifest(args.from_manifest)
            config = GameConfig.from_dict(m["config"])
            plan = TrainingPlan(**m["plan"])
            bundle = run_recipe(recipe, args.out, config, plan, m["seed"], m["runs"], m["jobs"],
                                m.get("defender_file"), m.get("attacker_file"), argv)
        else:
            if not args.recipe:
                raise ConfigError("give --recipe NAME (or --list-recipes)")
            if args.recipe not in RECIPES:
                raise ConfigError(f"unknown recipe {args.recipe!r}; choose from "
                                  + ", ".join(sorted(RECIPES)))
            recipe = RECIPES[args.recipe]
            if args.scale and args.scale != recipe.scale and recipe.needs_training:
                raise ConfigError(f"{recipe.name} trains policies and runs at desk scale only")
            scale = args.scale or recipe.scale
            recipe = recipe if scale == recipe.scale else \
                type(recipe)(**{**recipe.__dict__, "scale": scale})
            config, plan = base_config(scale), TrainingPlan()
            if args.config:
                try:
                    text = Path(args.config).read_text()
                except OSError as exc:
                    raise ConfigError(f"cannot read config: {exc}") from None
                config, plan = apply_overrides(config, plan, parse_config_text(text))
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            bundle = run_recipe(recipe, args.out, config, plan, args.seed, args.runs, args.jobs,
                                args.defender, args.attacker, argv)
    except ConfigError as exc:
        print(f"alertgame: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProvenanceError as exc:
        print(f"alertgame: artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except TrainingError as exc:
        print(f"alertgame: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = {k: {"mean_sup_cost": round(v.mean_sup_cost, 4),
                   "proportions": [round(float(p), 4) for p in v.proportions]}
               for k, v in bundle.stats.items()}
    print(json.dumps({"recipe": recipe.name, "out": str(bundle.out), "stats": summary}, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
