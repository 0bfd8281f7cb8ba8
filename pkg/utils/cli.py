"""
Argument helpers shared by the CLI subcommands
"""

import argparse
from typing import List


class UsageError(Exception):
    """Bad flags or an unknown subcommand"""

    def __init__(self, message: str, usage: str = ""):
        super().__init__(message)
        self.usage = usage


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on bad input"""

    def error(self, message):
        raise UsageError(message, self.format_usage())


def float_list(text: str) -> List[float]:
    """'0.5,0.25' -> [0.5, 0.25]"""
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def int_list(text: str) -> List[int]:
    """'200,400' -> [200, 400]"""
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def common_options() -> argparse.ArgumentParser:
    """--jobs and --log-level, accepted before or after the subcommand"""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help="Worker threads (default: HAZARD_DANTZIG_JOBS, then the core count)")
    parser.add_argument("--log-level", default=argparse.SUPPRESS,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level")
    return parser
