import argparse
import logging
import sys

from src.conf.config import setup_logging
from src.exceptions import RPOError
from src.routes import curves, diagnostics, experiments, plots

logger = logging.getLogger("rpo")


def build_parser() -> argparse.ArgumentParser:
    """
    The build_parser function assembles the ``rpo`` command line from the route modules.
    Every subcommand accepts ``--verbose``.

    :return: The argument parser
    :doc-author: Trelent
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-v", "--verbose", action="store_true", help="log at DEBUG level"
    )
    parser = argparse.ArgumentParser(
        prog="rpo", description="Reserve price optimization for first-price auctions"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for route in (experiments, curves, diagnostics, plots):
        route.register(subparsers, parents=[common])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging("DEBUG" if args.verbose else None)
    try:
        return args.handler(args)
    except RPOError as err:
        logger.debug("%s failed", args.command, exc_info=True)
        print(f"error: {err.detail}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
