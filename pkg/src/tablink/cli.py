"""Command line interface.

Exit codes: 0 success, 2 missing upstream artifact, 3 configuration problem,
1 anything else. Every subcommand reads one JSON config (--config) with
optional per-run overrides.
"""

from __future__ import annotations

import argparse
import logging
import sys

from tablink import pipeline
from tablink.config import STAGES, load_config
from tablink.errors import ConfigError, MissingArtifactError, TablinkError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_ARTIFACT = 2
EXIT_BAD_CONFIG = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tablink",
        description="Entity linking for table cells in scientific papers",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to the JSON config file")
    common.add_argument("--work-dir", help="override the configured work directory")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threshold", type=float, help="override the inKB threshold")
    common.add_argument("--k", type=int, help="override the candidate set size K")
    common.add_argument(
        "--backend", help="override the encoder backend name (stub, transformer)"
    )

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest-kb", parents=[common], help="validate the KB dump and report counts")
    sub.add_parser(
        "ingest-corpus", parents=[common], help="validate the corpus and report distributions"
    )
    for stage in STAGES:
        train = sub.add_parser(
            f"train-{stage}", parents=[common], help=f"train the {stage} model"
        )
        train.add_argument(
            "--test-topic", help="held-out test topic; defaults to training on all non-validation topics"
        )
    predict = sub.add_parser(
        "predict", parents=[common], help="run the full chain over the corpus"
    )
    predict.add_argument(
        "--topics", nargs="*", help="restrict prediction to these topics"
    )
    sub.add_parser("evaluate", parents=[common], help="compute all metrics from predictions")
    sub.add_parser("sweep", parents=[common], help="threshold sweep over retained match scores")
    return parser


def _config_from(args: argparse.Namespace):
    overrides = {
        "work_dir": args.work_dir,
        "seed": args.seed,
        "threshold": args.threshold,
        "k_candidates": args.k,
    }
    config = load_config(args.config, **overrides)
    if args.backend:
        config.backend = {**config.backend, "name": args.backend}
    return config


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _config_from(args)
        if args.command == "ingest-kb":
            config.require_paths()
            counts = pipeline.run_ingest_kb(config)
            print(
                "KB ingested: {methods} methods, {datasets} datasets, "
                "{papers} papers, {relations} relations".format(**counts)
            )
        elif args.command == "ingest-corpus":
            config.require_paths()
            print(pipeline.run_ingest_corpus(config))
        elif args.command.startswith("train-"):
            config.require_paths()
            directory = pipeline.run_train(
                config, args.command.removeprefix("train-"), args.test_topic
            )
            print(f"checkpoint written to {directory}")
        elif args.command == "predict":
            config.require_paths()
            directory = pipeline.run_predict(config, args.topics)
            print(f"predictions written to {directory}")
        elif args.command == "evaluate":
            report = pipeline.run_evaluate(config)
            print(report.render())
        elif args.command == "sweep":
            rows = pipeline.run_sweep(config)
            print(f"swept {len(rows)} thresholds into {config.report_dir}")
    except MissingArtifactError as exc:
        logger.error("%s", exc)
        return EXIT_MISSING_ARTIFACT
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_BAD_CONFIG
    except TablinkError as exc:
        logger.error("%s", exc)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
