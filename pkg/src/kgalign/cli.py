"""Command-line interface.

One subcommand per pipeline stage (each runs the pipeline up to and
including that stage, reusing cached work), plus run for the whole thing,
evaluate with an optional external split file, and gen-synth to produce
synthetic datasets with known gold alignments.

Exit codes: 0 success, 1 validation error (bad flags, bad config, bad input
data), 2 runtime error (stage failures, service failures, locked output
directory).
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Callable, NoReturn, Sequence

from . import config as config_mod
from . import kg, pipeline, synth
from .errors import ConfigError, InputError, KgalignError
from .metrics import report_table


class UsageError(Exception):
    """Raised instead of argparse's SystemExit so main controls the code."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="path to the JSON config file")
    sub.add_argument("--seed", type=int, default=None, help="override the top-level seed")
    sub.add_argument("--out", default=None, help="override the output directory")
    sub.add_argument("-v", "--verbose", action="store_true", help="log stage progress to stderr")


def _load(args: argparse.Namespace) -> config_mod.PipelineConfig:
    return config_mod.load_config(args.config, seed_override=args.seed, output_override=args.out)


def _run_until(args: argparse.Namespace, until: str) -> int:
    cfg = _load(args)
    outcome = pipeline.run_pipeline(cfg, until=until)
    print(f"completed through stage {until}; artifacts in {outcome.output_dir}")
    return 0


def _cmd_stage(until: str) -> Callable[[argparse.Namespace], int]:
    return lambda args: _run_until(args, until)


def _cmd_split(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if args.hard:
        cfg = config_mod.force_hard_split(cfg)
    outcome = pipeline.run_pipeline(cfg, until="split")
    print(f"completed through stage split; artifacts in {outcome.output_dir}")
    return 0


def _cmd_train_embedder(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if cfg.embedder.provider != "projection" or not cfg.embedder.train.enabled:
        raise ConfigError(
            "train-embedder needs embedder.provider = \"projection\" and embedder.train.enabled = true"
        )
    return _run_until(args, "embed")


def _cmd_retrieve(args: argparse.Namespace) -> int:
    cfg = _load(args)
    outcome = pipeline.run_pipeline(cfg, until="retrieve")
    print(f"completed through stage retrieve; artifacts in {outcome.output_dir}")
    if args.reverse:
        path = pipeline.emit_reverse_candidates(cfg)
        print(f"reverse-direction candidates in {path}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if args.split is not None:
        report = pipeline.evaluate_with_split(cfg, args.split)
        print(report_table(report), end="")
        return 0
    outcome = pipeline.run_pipeline(cfg, until="evaluate")
    if outcome.report is not None:
        print(report_table(outcome.report), end="")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    if args.no_verbalization:
        cfg = config_mod.disable_verbalization(cfg)
    if args.no_reranker:
        cfg = config_mod.disable_reranker(cfg)
    outcome = pipeline.run_pipeline(cfg)
    if outcome.report is not None:
        print(report_table(outcome.report), end="")
    print(f"artifacts in {outcome.output_dir}")
    return 0


def _cmd_gen_synth(args: argparse.Namespace) -> int:
    if not 0.0 <= args.attr_dropout <= 1.0 or not 0.0 <= args.triple_dropout <= 1.0:
        raise InputError("dropout rates must lie in [0, 1]")
    if not 0.0 <= args.name_corruption <= 1.0:
        raise InputError("--name-corruption must lie in [0, 1]")
    cfg = synth.SynthConfig(
        n_entities=args.entities,
        seed=args.seed,
        attr_dropout=args.attr_dropout,
        triple_dropout=args.triple_dropout,
        apply_synonyms=args.synonyms,
        name_corruption=args.name_corruption,
    )
    bundle = synth.generate_bundle(cfg)
    kg.write_openea(bundle, args.out)
    print(f"wrote synthetic dataset ({args.entities} entities per side) to {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="kgalign", description="Entity alignment over knowledge graphs.")
    subs = parser.add_subparsers(dest="command", metavar="command")
    subs.required = True

    stage_help = {
        "ingest": "parse the dataset and store it in the normalized layout",
        "verbalize": "render every entity to text",
        "embed": "embed all entity texts (training the projection when configured)",
        "index": "build the target-side vector index",
        "train-reranker": "train the pair scorer on retrieve-stage candidates",
        "rerank": "rescore the candidate sets with the pair scorer",
        "align": "decide one-to-one alignments from the final ranking",
    }
    for name, until in (
        ("ingest", "ingest"),
        ("verbalize", "verbalize"),
        ("embed", "embed"),
        ("index", "index"),
        ("train-reranker", "train_reranker"),
        ("rerank", "rerank"),
        ("align", "align"),
    ):
        sub = subs.add_parser(name, help=stage_help[name])
        _add_common(sub)
        sub.set_defaults(fn=_cmd_stage(until))

    sub = subs.add_parser("split", help="tag gold pairs train/val/test")
    _add_common(sub)
    sub.add_argument("--hard", action="store_true", help="adversarial split: least name-similar pairs become test")
    sub.set_defaults(fn=_cmd_split)

    sub = subs.add_parser("train-embedder", help="train the projection embedder (requires embedder.train.enabled)")
    _add_common(sub)
    sub.set_defaults(fn=_cmd_train_embedder)

    sub = subs.add_parser("retrieve", help="retrieve top-k candidates for every source entity")
    _add_common(sub)
    sub.add_argument("--reverse", action="store_true", help="also emit target-to-source candidates for analysis")
    sub.set_defaults(fn=_cmd_retrieve)

    sub = subs.add_parser("evaluate", help="compute metrics on the test split")
    _add_common(sub)
    sub.add_argument("--split", default=None, help="evaluate against this split file instead of the run's own")
    sub.set_defaults(fn=_cmd_evaluate)

    sub = subs.add_parser("run", help="run the whole pipeline and print the report")
    _add_common(sub)
    sub.add_argument("--no-verbalization", action="store_true", help="feed raw triple serializations to retrieval")
    sub.add_argument("--no-reranker", action="store_true", help="the retrieval ranking is final")
    sub.set_defaults(fn=_cmd_run)

    sub = subs.add_parser("gen-synth", help="generate a synthetic dataset with known gold alignment")
    sub.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub.add_argument("--out", required=True, help="directory to write the dataset into")
    sub.add_argument("--entities", type=int, default=2000, help="entities per side (default 2000)")
    sub.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    sub.add_argument("--attr-dropout", type=float, default=0.0, help="target-side attribute dropout rate")
    sub.add_argument("--triple-dropout", type=float, default=0.0, help="target-side relation dropout rate")
    sub.add_argument("--synonyms", action="store_true", help="substitute synonyms into target-side values")
    sub.add_argument("--name-corruption", type=float, default=0.0, help="target-side name corruption rate")
    sub.set_defaults(fn=_cmd_gen_synth)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.fn(args)
    except (ConfigError, InputError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except KgalignError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
