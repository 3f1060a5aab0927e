import argparse
import logging

from src.conf.config import settings
from src.repository import results as repository_results
from src.services import experiments as experiments_service

logger = logging.getLogger(__name__)


def register(subparsers, parents: list[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(
        "curve", parents=parents, help="estimate the revenue curve over a reserve grid"
    )
    parser.add_argument("--env", required=True, help="environment spec, e.g. perfect,gamma=0.4")
    parser.add_argument("--grid", default=settings.grid, help="LO:HI:STEP")
    parser.add_argument("--samples", type=int, default=settings.grid_samples)
    parser.add_argument("--out", required=True, help="output CSV")
    parser.add_argument("--seed", type=int, default=settings.master_seed)
    parser.set_defaults(handler=curve)


def curve(args: argparse.Namespace) -> int:
    """
    The curve function writes (r, revenue, std_error) for every grid point and
    reports the best reserve found.

    :param args: argparse.Namespace: Parsed ``rpo curve`` arguments
    :return: The exit code
    """
    points = experiments_service.curve(args.env, args.grid, args.samples, args.seed)
    with repository_results.created_outputs([args.out]):
        repository_results.write_curve(points, args.out)
    best = max(points, key=lambda point: point.mean)
    logger.info("wrote %d grid points to %s", len(points), args.out)
    print(f"max revenue {best.mean:.5f} at r={best.reserve:.4f}")
    return 0
