"""
hazard-dantzig - command-line entry point
Dantzig selector for the proportional hazards model: simulation, fitting,
cone factors, tail and error bounds, and consistency experiments.
"""

import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from core.config import get_config, setup_logging
from routes import bounds, experiment, factors, fit, simulate
from services.survival_sim import CsvParseError
from utils.cli import CliParser, UsageError, common_options

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

VALIDATION_ERRORS = (ValidationError, ValueError, CsvParseError, UsageError)


def build_parser() -> CliParser:
    """Top-level parser with one subparser per command"""
    common = common_options()
    parser = CliParser(
        prog="hazard-dantzig",
        description="Dantzig selector for the Cox proportional hazards model",
        parents=[common],
    )
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=CliParser)
    for route in (simulate, fit, factors, bounds, experiment):
        route.register(subparsers, [common])
    return parser


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; 0 on success, 1 on validation errors, 2 on runtime errors"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(e.usage or parser.format_usage())
        sys.stderr.write(f"hazard-dantzig: error: {e}\n")
        return EXIT_VALIDATION
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    if args.command is None:
        sys.stderr.write(parser.format_usage())
        return EXIT_VALIDATION

    setup_logging(getattr(args, "log_level", None))
    args.jobs = getattr(args, "jobs", None) or get_config().jobs
    args.argv = argv

    try:
        args.handler(args)
    except VALIDATION_ERRORS as e:
        logger.error(f"{args.command}: invalid input: {e}")
        return EXIT_VALIDATION
    except Exception as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        logger.debug("traceback", exc_info=True)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
