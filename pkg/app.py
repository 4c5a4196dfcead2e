"""
ConceptLens - command-line entrypoint.

Finds concept-specific neurons in a prompt-tuned toy masked LM, ablates them
against matched random controls and reports the statistics.

    python app.py run --out runs/demo --seed 7
    python app.py check-s1
"""
import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from src.core.config import settings
from src.core.errors import ConceptLensError
from src.pipeline import commands

logger = logging.getLogger("conceptlens")

STAGES = {
    "gen": "Generate the synthetic benchmark",
    "reliability": "Rating ICCs per attribute and the factor structure of the ratings",
    "train": "Tune one prompt per (concept, seed) on a frozen toy model",
    "extract": "Extract the seeds x concepts x neurons activation tensor",
    "rsa": "Searchlight Kendall tau of every neuron against every attribute",
    "select": "Rank neurons per attribute and write top-n overlaps",
    "ablate": "Run the selective / random ablation grid",
    "report": "Drop tests, dip table, human weights and correlations",
    "run": "Every stage in one pipeline graph",
}


def configure_logging(level: str) -> None:
    """Log to stderr so stdout stays machine-readable."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptlens", description=f"{settings.APP_TITLE} {settings.VERSION}")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    run_flags = argparse.ArgumentParser(add_help=False)
    run_flags.add_argument("--config", help="experiment.json run configuration")
    run_flags.add_argument("--seed", type=int, help="Master seed (overrides PIPELINE_SEED)")
    run_flags.add_argument("--q", type=float, help="Searchlight BY-FDR level")
    run_flags.add_argument("--n", type=int, help="Single n level for selection and ablation")
    run_flags.add_argument("--out", help="Output directory")
    run_flags.add_argument("--jobs", type=int, help="Worker processes")
    run_flags.add_argument("--set", dest="sets", action="append", default=[], metavar="PATH=VALUE",
                           help="Override a config field by dotted path, e.g. synth.concepts=8")
    run_flags.add_argument("--progress", action="store_true", help="Show progress bars")

    for name, text in STAGES.items():
        p = sub.add_parser(name, parents=[run_flags], help=text)
        if name in ("report", "run"):
            p.add_argument("--plot", action="store_true", help="Also write attribute_drops.svg")

    stats = sub.add_parser("stats", help="Run one statistical test on CSV columns")
    stats.add_argument("test", choices=commands.STATS_TESTS)
    stats.add_argument("--csv", required=True)
    stats.add_argument("--columns", nargs="+", required=True)
    stats.add_argument("--tail", choices=["two-sided", "greater", "less"], default="two-sided")
    stats.add_argument("--boots", type=int, default=10_000)
    stats.add_argument("--seed", type=int, default=0)
    stats.add_argument("--factors", type=int, default=1, help="components to extract (pca)")
    stats.add_argument("--permutations", type=int, default=1000, help="parallel-analysis permutations (factors)")

    s1 = sub.add_parser("check-s1", help="Pearson r between rater kappa and prompt accuracy")
    s1.add_argument("--fixture", help="Defaults to the shipped data/table_s1.csv")
    return parser


def dispatch(args: argparse.Namespace) -> None:
    if args.command == "stats":
        result = commands.cmd_stats(args.test, args.csv, args.columns, tail=args.tail,
                                    boots=args.boots, seed=args.seed, factors=args.factors,
                                    permutations=args.permutations)
        print(json.dumps(result))
        return
    if args.command == "check-s1":
        print(json.dumps(commands.cmd_check_s1(args.fixture)))
        return

    cfg = commands.load_run_config(args.config, seed=args.seed, q=args.q, n=args.n,
                                   out=args.out, jobs=args.jobs, sets=args.sets)
    kwargs = {}
    if args.command in ("train", "rsa", "ablate", "report", "run"):
        kwargs["progress"] = args.progress
    if args.command in ("report", "run"):
        kwargs["plot"] = args.plot
    handler = getattr(commands, f"cmd_{args.command}")
    written = handler(cfg, **kwargs)
    logger.info("%s: wrote %d artifact(s) under %s", args.command, len(written), cfg.out)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Exit 0 on success, 1 on a domain error, 2 on a usage error (raised by argparse)."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        dispatch(args)
    except ConceptLensError as exc:
        logger.error("%s", exc)
        return 1
    except ValidationError as exc:
        logger.error("Invalid value: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
