"""
Dispel - Command Line Entry Point
Data mixing against spurious correlations: synthetic theory, GD dynamics
and last-layer retraining, all writing CSV plus a run manifest
"""

import argparse
import sys
from typing import List, Optional

from pydantic import ValidationError as PydanticValidationError

from cli import data, experiments, models, pipeline
from config import settings, validate_runtime_config
from models.errors import DispelError, ValidationError
from utils.logger import get_logger
from utils.workers import shutdown_pool

logger = get_logger("main")

COMMAND_MODULES = (data, models, experiments, pipeline)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dispel",
        description="Remove spurious correlations from linear heads by mixing in group-balanced data.",
    )
    parser.add_argument("--version", action="version", version=f"{settings.APP_NAME} {settings.APP_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    for module in COMMAND_MODULES:
        module.register(subparsers)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """
    Parse argv, run one command and return its exit code.

    argparse exits with 2 on usage errors before any command runs.
    """
    args = build_parser().parse_args(argv)
    validate_runtime_config()
    logger.info("command_started", extra={"command": args.command, "seed": args.seed})

    # ── GLOBAL ERROR HANDLER ────────────────────────────────────────────────
    try:
        return args.handler(args) or 0
    except DispelError as e:
        logger.error("command_failed", extra={"command": args.command, "error": type(e).__name__, "exit_code": e.exit_code})
        print(f"dispel {args.command}: {e}", file=sys.stderr)
        return e.exit_code
    except PydanticValidationError as e:
        logger.error("command_failed", extra={"command": args.command, "error": "ValidationError"})
        print(f"dispel {args.command}: {e}", file=sys.stderr)
        return ValidationError.exit_code
    except KeyboardInterrupt:
        logger.warning("command_interrupted", extra={"command": args.command})
        return 130
    finally:
        shutdown_pool()


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
