"""Command-line front end: ``trialrank <stage> --config run.yaml [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, pipeline
from .config import RunConfig, expand_sweep, load_config
from .errors import TrialRankError, ValidationError

log = logging.getLogger("trialrank")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the validation code (1), not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.status is not None:
        changes["ingest.status"] = args.status
    if changes:
        cfg = cfg.override(**changes)
    out = Path(args.out) if args.out else cfg.path("output")
    if args.out:
        cfg = replace(cfg, output=str(out))
    return cfg, out


def _stage_command(name):
    def cmd(args) -> int:
        cfg, out = _resolve(args)
        pipeline.run_stage(name, cfg, out)
        print(f"{name}: wrote {out}")
        return 0
    cmd.__name__ = f"cmd_{name}"
    return cmd


cmd_ingest = _stage_command("ingest")
cmd_featurize = _stage_command("featurize")
cmd_reduce = _stage_command("reduce")
cmd_split = _stage_command("split")
cmd_rank = _stage_command("rank")
cmd_evaluate = _stage_command("evaluate")


def cmd_run(args) -> int:
    cfg, out = _resolve(args)
    pipeline.run_pipeline(cfg, out)
    print(f"run: wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg, out = _resolve(args)
    if args.jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    runs = expand_sweep(cfg)
    dirs = pipeline.run_sweep(runs, out, jobs=args.jobs)
    print(f"sweep: {len(dirs)} run(s) under {out}")
    return 0


COMMANDS = {
    "ingest": (cmd_ingest, "load registry records into a corpus snapshot"),
    "featurize": (cmd_featurize, "build the vocabulary and document vectors"),
    "reduce": (cmd_reduce, "apply PCA, LDA or no reduction"),
    "split": (cmd_split, "date-ordered train/test split of review links"),
    "rank": (cmd_rank, "rank candidates for each review (simrank or matfac)"),
    "evaluate": (cmd_evaluate, "median rank, recall@N and WSS reports"),
    "run": (cmd_run, "all six stages in order"),
    "sweep": (cmd_sweep, "one full run per grid point of the config's sweep section"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trialrank", description=__doc__)
    parser.add_argument("--version", action="version", version=f"trialrank {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run config (YAML or JSON)")
        p.add_argument("--out", help="output directory (default: the config's output)")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--status", help="keep only records with this status, e.g. completed")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="parallel runs")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrialRankError as exc:
        print(f"trialrank {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"trialrank {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
