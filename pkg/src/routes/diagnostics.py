import argparse
import logging

from src.conf.config import settings
from src.repository import results as repository_results
from src.services import experiments as experiments_service

logger = logging.getLogger(__name__)


def register(subparsers, parents: list[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(
        "diag", parents=parents, help="measure estimator bias and variance"
    )
    parser.add_argument("--estimator", required=True)
    parser.add_argument("--env", required=True, help="environment spec")
    parser.add_argument("--reserve", type=float, required=True)
    parser.add_argument("--reps", type=int, required=True, help="replications, at least 100")
    parser.add_argument("--out", required=True, help="output CSV")
    parser.add_argument("--perturbation", type=float, default=settings.perturbation)
    parser.add_argument("--samples-per-arm", type=int, default=settings.samples_per_arm)
    parser.add_argument("--quantile", type=float, default=settings.quantile)
    parser.add_argument("--seed", type=int, default=settings.master_seed)
    parser.set_defaults(handler=diag)


def diag(args: argparse.Namespace) -> int:
    """
    The diag function measures an estimator, checks it against its bound and
    writes the report row to ``--out``.
    A FAIL verdict still exits 0: the report is the result.

    :param args: argparse.Namespace: Parsed ``rpo diag`` arguments
    :return: The exit code
    :doc-author: Trelent
    """
    check = experiments_service.diagnose(
        args.estimator,
        args.env,
        args.reserve,
        args.reps,
        perturbation=args.perturbation,
        samples_per_arm=args.samples_per_arm,
        quantile=args.quantile,
        seed=args.seed,
    )
    with repository_results.created_outputs([args.out]):
        repository_results.write_report(check, args.out)
    report = check.report
    print(
        f"{report.estimator}: bias {report.empirical_bias:+.4f} (se {report.bias_se:.4f}), "
        f"variance {report.empirical_variance:.4f} -> {check.verdict}"
    )
    if check.note:
        print(f"note: {check.note}")
    return 0
