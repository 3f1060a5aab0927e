import argparse
import logging

from src.conf.config import settings
from src.services import experiments as experiments_service

logger = logging.getLogger(__name__)


def register(subparsers, parents: list[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(
        "run", parents=parents, help="run an experiment from a key=value config file"
    )
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--jobs", type=int, default=settings.jobs, help="parallel trials")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    """
    The run function loads the experiment config, runs every trial and writes the
    result files to ``--out``.

    :param args: argparse.Namespace: Parsed ``rpo run`` arguments
    :return: The exit code
    :doc-author: Trelent
    """
    config = experiments_service.load_config(args.config, master_seed=args.seed)
    summary = experiments_service.run_experiment(config, args.out, jobs=args.jobs)
    print(
        f"variant {summary.variant}: avg_rev_50={summary.avg_rev_50:.4f} "
        f"+- {summary.ci_50:.4f} (mu*={summary.mu_star:.5f} at r*={summary.r_star:.2f})"
    )
    return 0
