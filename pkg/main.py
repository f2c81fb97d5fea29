#!/usr/bin/env python3
"""
Writer Identification - command line entry point

Subcommands run the offline pipeline stage by stage:
synth-corpus, train-cnn, calibrate, train-writers, identify, evaluate.
"""

import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError as PydanticValidationError

from core.config import load_config
from core.exceptions import ConfigurationError, WriterIdError
from core.logger import setup_logger

logger = setup_logger("main")

COMMANDS = ("synth-corpus", "train-cnn", "calibrate", "train-writers", "identify", "evaluate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="writer-id",
        description="Text-independent writer identification from handwritten word images.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file (defaults apply when omitted)")
    parser.add_argument("--jobs", type=int, default=None, help="worker threads")
    parser.add_argument("--pooling", choices=("average", "pre", "post"), default=None)
    parser.add_argument("--layer", choices=("conv1", "conv2", "conv3", "fused"), default=None,
                        help="layer mode used for identification")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--protocol", choices=("manifest", "iam"), default=None,
                        help="iam: re-split each writer into one train and one test page")
    parser.add_argument("--force", action="store_true", help="accept artifacts built with another config")
    parser.add_argument("--words-per-writer", type=int, default=None,
                        help="identify: score N random test words per writer")
    parser.add_argument("--image", default=None, help="identify: a single word image instead of the test split")
    parser.add_argument("--dump", default=None, help="identify: write keypoints, fragments and descriptors here")
    parser.add_argument("--experiment", default="pooling",
                        choices=("pooling", "layers", "hog-bins", "words", "stability"),
                        help="evaluate: which experiment to run")
    return parser


def run(args: argparse.Namespace) -> int:
    from pipeline.runner import WriterIdentificationPipeline

    overrides = {"pooling": args.pooling, "layer_mode": args.layer, "seed": args.seed,
                 "protocol": args.protocol}
    config = load_config(args.config, overrides)
    pipeline = WriterIdentificationPipeline(config, jobs=args.jobs, force=args.force)
    logger.info(f"🚀 {args.command} (config {config.digest()[:12]})")

    if args.command == "synth-corpus":
        corpus, calibration = pipeline.cmd_synth_corpus()
        print(f"Synthetic corpus: {len(corpus)} words, calibration corpus: {len(calibration)} words")
    elif args.command == "train-cnn":
        weights, history = pipeline.cmd_train_cnn()
        print(f"Best epoch {history.best_epoch}: validation accuracy {history.best_val_accuracy:.4f}")
    elif args.command == "calibrate":
        profiles = pipeline.cmd_calibrate()
        for layer, profile in sorted(profiles.items()):
            print(f"conv{layer}: strongest filters {[r.filter for r in profile.strongest]}")
    elif args.command == "train-writers":
        bundle = pipeline.cmd_train_writers()
        for layer, lm in sorted(bundle.layers.items()):
            print(f"conv{layer}: C={lm.C:g} gamma={lm.gamma:g}")
        if bundle.alpha is not None:
            print(f"alpha={bundle.alpha:.2f}")
    elif args.command == "identify":
        summary = pipeline.cmd_identify(args.image, args.words_per_writer, args.dump)
        print(f"Word top-1 {summary['words']['top1']:.4f} top-5 {summary['words']['top5']:.4f}, "
              f"page top-1 {summary['pages']['top1']:.4f}")
    elif args.command == "evaluate":
        result = pipeline.cmd_evaluate(args.experiment)
        for row in result["table"]:
            print(row)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except PydanticValidationError as e:
        logger.error(f"❌ Invalid configuration: {e}")
        return ConfigurationError.exit_code
    except WriterIdError as e:
        logger.error(f"❌ {type(e).__name__}: {e.message}")
        if e.details:
            logger.debug(f"Details: {e.details}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
