import argparse
import logging
from pathlib import Path

from src.exceptions import DataError
from src.repository import results as repository_results

logger = logging.getLogger(__name__)


def register(subparsers, parents: list[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(
        "plot", parents=parents, help="merge summary files into plot-ready data"
    )
    parser.add_argument(
        "--in", dest="inputs", required=True, nargs="+",
        help="run directories or summary CSV files",
    )
    parser.add_argument("--out", required=True, help="output CSV")
    parser.add_argument("--svg", default=None, help="also draw a line chart to this file")
    parser.set_defaults(handler=plot)


def find_summaries(inputs: list[str]) -> list[Path]:
    """
    The find_summaries function expands directories to the summary.csv files
    below them; files are taken as given.

    :param inputs: list[str]: Directories or files
    :return: Summary paths, directories expanded in sorted order
    """
    paths = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            found = sorted(path.glob("**/summary.csv"))
            if not found:
                raise DataError(f"no summary.csv under {path}")
            paths.extend(found)
        elif path.exists():
            paths.append(path)
        else:
            raise DataError(f"missing input: {path}")
    return paths


def plot(args: argparse.Namespace) -> int:
    outputs = [args.out] + ([args.svg] if args.svg else [])
    with repository_results.created_outputs(outputs):
        frame = repository_results.emit_plot_data(find_summaries(args.inputs), args.out)
        if args.svg:
            repository_results.plot_svg(frame, args.svg)
    return 0
