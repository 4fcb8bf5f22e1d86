"""``answer-recommender`` command line.

Exit codes: 0 ok, 2 missing input, 3 stage order (or stale artifacts),
4 empty index, 5 bind failure, 6 invalid recommend query.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from . import pipeline
from .config import PipelineConfig
from .pipeline import MissingInputError, PipelineError, Recommender, query_tokens
from .serve import serve
from .synth import generate_synthetic_dump
from .text import parse_timestamp
from .util import dumps_record, write_json

__all__ = [
    "build_parser",
    "main",
]


# CLI flag -> PipelineConfig field, for flags whose names differ from the field.
_RENAMED = {"max_len": "cq_max_len"}
_CONFIG_FLAGS = (
    "dump_dir",
    "workspace",
    "seed",
    "dim",
    "hidden",
    "beam",
    "max_len",
    "k",
    "k_sim",
    "epochs",
    "batch",
    "lr",
    "patience",
    "maps",
    "boost_mode",
    "embeddings_file",
    "drop_cq",
    "drop_labeling",
)


def parse_k_range(value: str) -> list[int]:
    """``"6..10"`` or ``"5,7,9"`` to a list of pool sizes."""
    try:
        if ".." in value:
            low, high = (int(part) for part in value.split("..", 1))
            values = list(range(low, high + 1))
        else:
            values = [int(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid k range {value!r}") from exc
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"invalid k range {value!r}")
    return values


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("configuration")
    group.add_argument("--config", type=Path, help="Flat TOML file with configuration keys")
    group.add_argument("--workspace", type=Path, help="Directory for all stage artifacts")
    group.add_argument("--dump-dir", type=Path, help="Directory holding Posts.xml and Comments.xml")
    group.add_argument("--seed", type=int)
    group.add_argument("--dim", type=int, help="Word embedding size")
    group.add_argument("--hidden", type=int, help="LSTM hidden size")
    group.add_argument("--beam", type=int, help="Beam width for clarifying-question generation")
    group.add_argument("--max-len", type=int, help="Maximum generated clarifying-question length")
    group.add_argument("--k", type=int, help="Number of similar questions / candidate pool size")
    group.add_argument("--k-sim", type=int, help="Size of the similar set used for labeling")
    group.add_argument("--epochs", type=int)
    group.add_argument("--batch", type=int)
    group.add_argument("--lr", type=float)
    group.add_argument("--patience", type=int)
    group.add_argument("--maps", type=int, help="Feature maps per filter width")
    group.add_argument("--boost-mode", choices=("generate", "retrieve"))
    group.add_argument("--embeddings-file", type=Path, help="Pre-trained vectors, one `token v1 ... vd` per line")
    group.add_argument("--drop-cq", action="store_true", default=None, help="Ablation: rank with bare titles")
    group.add_argument(
        "--drop-labeling", action="store_true", default=None, help="Ablation: binary accepted/other labels"
    )

    runtime = common.add_argument_group("runtime")
    runtime.add_argument("--force", action="store_true", help="Run even if upstream artifacts are stale")
    runtime.add_argument("--rrd", type=Path, help="Save training curves to this Rerun .rrd file")
    runtime.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_arguments()
    parser = argparse.ArgumentParser(
        prog="answer-recommender",
        description="Recommend answers to new StackExchange questions from similar solved ones.",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="command")

    def command(name: str, help: str) -> argparse.ArgumentParser:
        return commands.add_parser(name, parents=[common], help=help, description=help)

    command("ingest", "Parse the dump and extract clarifying questions")
    stats = command("stats", "Answer-hunger statistics and clarifying-question answer probabilities")
    stats.add_argument("--dump-date", type=parse_timestamp, help="Reference date (default: latest post)")
    stats.add_argument("--out", type=Path, help="Also write the report to this file")
    command("index", "Build the vocabulary, embeddings and similar-question index")
    command("train-qboost", "Train the clarifying-question generator")
    command("label", "Label QA pairs and fix the train/val/test split")
    command("train-ranker", "Train the answer ranker")
    command("tune", "Tune the score weights on validation questions")
    evaluate = command("evaluate", "Evaluate on test questions")
    evaluate.add_argument("--oracle", action="store_true", help="Score the accepted answer first (test mode)")
    evaluate.add_argument("--sweep-k", type=parse_k_range, help="Also report P@K for each pool size, e.g. 6..10")
    recommend = command("recommend", "Recommend answers for one question")
    recommend.add_argument("query", help="Question title")
    serve_parser = command("serve", "Serve recommendations as newline-delimited JSON over TCP")
    serve_parser.add_argument("--host", default="127.0.0.1")
    serve_parser.add_argument("--port", type=int, default=8765)
    synth = command("synth", "Write a planted synthetic dump to --dump-dir")
    synth.add_argument("--topics", type=int, default=40)
    synth.add_argument("--subtopics", type=int, default=5)
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then ``--config``, then explicit flags."""
    config = PipelineConfig()
    if args.config is not None:
        if not args.config.exists():
            raise MissingInputError(f"Missing config file: {args.config}")
        config = PipelineConfig.from_toml(args.config)
    overrides = {_RENAMED.get(flag, flag): getattr(args, flag) for flag in _CONFIG_FLAGS}
    return config.update(overrides).validate()


def _print(record: Any) -> None:
    print(json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False))


def run(args: argparse.Namespace, config: PipelineConfig) -> None:
    force, rrd = args.force, args.rrd
    match args.command:
        case "ingest":
            _print(pipeline.run_ingest(config, force))
        case "stats":
            report = pipeline.run_stats(config, args.dump_date)
            if args.out is not None:
                write_json(args.out, report)
            _print(report)
        case "index":
            _print(pipeline.run_index(config, force))
        case "train-qboost":
            _print(pipeline.run_train_qboost(config, force, rrd))
        case "label":
            _print(pipeline.run_label(config, force))
        case "train-ranker":
            _print(pipeline.run_train_ranker(config, force, rrd))
        case "tune":
            _print(pipeline.run_tune(config, force))
        case "evaluate":
            result = pipeline.run_evaluate(config, force, args.sweep_k or (), args.oracle)
            _print(result)
        case "recommend":
            query_tokens(args.query)
            recommendation = Recommender.load(config, force).recommend(args.query)
            print(dumps_record(recommendation.to_response()))
        case "serve":
            serve(Recommender.load(config, force), args.host, args.port)
        case "synth":
            dump = generate_synthetic_dump(config.dump_dir, args.topics, args.subtopics, config.seed)
            _print({"dump_dir": str(dump.directory), "n_questions": dump.n_questions, "n_answers": dump.n_answers,
                    "n_comments": dump.n_comments, "n_duplicates": dump.n_duplicates})


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        try:
            config = load_config(args)
        except ValueError as exc:
            parser.error(str(exc))
        run(args, config)
    except PipelineError as exc:
        print(f"answer-recommender: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
