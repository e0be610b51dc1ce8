"""Main entry point for the edu-retriever command line."""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.constants import (
    ALL_VARIANTS,
    APP_NAME,
    APP_VERSION,
    EXIT_FAILURE,
    EXIT_OK,
    LOG_LEVEL,
    SPLITS,
)
from src.config import load_config
from src.errors import RetrievalError
from src.logger import get_logger, setup_logging
from src.pipeline import cmd_evaluate, cmd_prepare, cmd_retrieve, cmd_train

# Configure logging
logger = get_logger(__name__)

COMMANDS = ("prepare", "train", "retrieve", "evaluate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edu-retriever",
        description=f"{APP_NAME}: EDU filtering and document ranking for long-input summarization",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="JSON configuration file")
    parser.add_argument("--seed", type=int, help="seed for every stochastic component")
    parser.add_argument("--budget", type=int, help="summarizer input budget in tokens")
    parser.add_argument(
        "--variant",
        action="append",
        choices=ALL_VARIANTS,
        help="truncation variant (repeatable)",
    )
    parser.add_argument("--few-shot", type=float, dest="few_shot", help="fraction of training sets")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--checkpoint", type=Path, help="checkpoint for retrieve/evaluate")
    parser.add_argument("--split", choices=SPLITS, default="test", help="split for retrieve/evaluate")
    parser.add_argument("--resume", action="store_true", help="resume training from the last epoch")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="console log level")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Configuration overrides given on the command line."""
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "budget": args.budget,
        "variants": args.variant,
        "few_shot": args.few_shot,
        "out_dir": str(args.out) if args.out else None,
    }
    if args.resume:
        overrides["resume"] = True
    return overrides


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run one command and return the process exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(level=args.log_level)

    try:
        config = load_config(args.config, overrides_from_args(args))
        setup_logging(log_dir=Path(config.out_dir), level=args.log_level)
        logger.info(f"Running {args.command} (seed {config.seed}, out {config.out_dir})")

        if args.command == "prepare":
            counts = cmd_prepare(config)
            logger.info(f"Prepared splits: {counts}")
        elif args.command == "train":
            path = cmd_train(config)
            logger.info(f"Checkpoint: {path}")
        elif args.command == "retrieve":
            outputs = cmd_retrieve(config, args.checkpoint, args.split)
            logger.info(f"Assembled inputs: {', '.join(str(p) for p in outputs.values())}")
        elif args.command == "evaluate":
            path = cmd_evaluate(config, args.checkpoint, args.split)
            logger.info(f"Report: {path}")
    except RetrievalError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {e}")
        return EXIT_FAILURE

    return EXIT_OK


def main():
    """Main entry point."""
    sys.exit(run())


if __name__ == "__main__":
    main()
