import logging
from collections.abc import Iterable, Iterator, Sequence
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

from src.exceptions import DataError, RPOError
from src.schemas import RevenueEstimate, TheoremCheck, Trajectory, TrialSummary

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"

TRAJECTORY_COLUMNS = [
    "trial",
    "round",
    "reserve",
    "r_plus",
    "r_minus",
    "gradient",
    "gradient_excess",
    "gradient_demand",
    "gradient_mapping",
]
SUMMARY_COLUMNS = ["variant", "round", "mean_rev", "ci_half", "norm_rev"]
AVERAGES_COLUMNS = [
    "variant", "avg_rev_20", "ci_20", "avg_rev_50", "ci_50", "mu_star", "r_star"
]
PLOT_COLUMNS = ["variant", "round", "mean", "ci_lo", "ci_hi"]


def write_trajectories(
    trajectories: Iterable[tuple[int, Trajectory]], path: str | Path
) -> Path:
    """
    The write_trajectories function writes every round of every trial to one CSV.
    Missing gradient parts (the naive estimator has none) are left empty.

    :param trajectories: Iterable[tuple[int, Trajectory]]: (trial index, trajectory) pairs
    :param path: str | Path: Output file
    :return: The path written
    :doc-author: Trelent
    """
    rows = [
        {
            "trial": trial,
            "round": rec.round,
            "reserve": rec.reserve,
            "r_plus": rec.r_plus,
            "r_minus": rec.r_minus,
            "gradient": rec.gradient.value,
            "gradient_excess": rec.gradient.excess_part,
            "gradient_demand": rec.gradient.demand_part,
            "gradient_mapping": rec.gradient_mapping,
        }
        for trial, trajectory in trajectories
        for rec in trajectory.records
    ]
    frame = pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return Path(path)


def write_summary(summary: TrialSummary, path: str | Path) -> Path:
    frame = pd.DataFrame(
        {
            "variant": summary.variant,
            "round": np.arange(1, summary.rounds + 1),
            "mean_rev": summary.mean_rev,
            "ci_half": summary.ci_half,
            "norm_rev": summary.norm_rev,
        },
        columns=SUMMARY_COLUMNS,
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# mu_star={summary.mu_star!r}\n")
        fh.write(f"# r_star={summary.r_star!r}\n")
        frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT)
    return Path(path)


def read_summary(path: str | Path) -> tuple[pd.DataFrame, dict[str, float]]:
    """
    The read_summary function loads a summary CSV and its ``# key=value`` header lines.

    :param path: str | Path: Summary file
    :return: The table and the header values
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"summary file not found: {path}")
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key] = float(value)
    frame = pd.read_csv(path, comment="#", dtype={"variant": str})
    missing = set(SUMMARY_COLUMNS) - set(frame.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    return frame, meta


def write_averages(summary: TrialSummary, path: str | Path) -> Path:
    frame = pd.DataFrame(
        [{column: getattr(summary, column) for column in AVERAGES_COLUMNS}],
        columns=AVERAGES_COLUMNS,
    )
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return Path(path)


def write_config_echo(values: dict, path: str | Path) -> Path:
    lines = []
    for key, value in values.items():
        if value is None:
            continue
        if isinstance(value, (tuple, list)):
            value = ",".join(repr(item) for item in value)
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


def write_curve(curve: Sequence[RevenueEstimate], path: str | Path) -> Path:
    frame = pd.DataFrame(
        {
            "r": [point.reserve for point in curve],
            "revenue": [point.mean for point in curve],
            "std_error": [point.std_error for point in curve],
        }
    )
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return Path(path)


def write_report(check: TheoremCheck, path: str | Path) -> Path:
    row = check.report.model_dump()
    row.update(check.model_dump(exclude={"report"}))
    pd.DataFrame([row]).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return Path(path)


def emit_plot_data(summary_paths: Sequence[str | Path], path: str | Path) -> pd.DataFrame:
    """
    The emit_plot_data function merges summary files into one long-format table
    with a 95% band per round, ready for plotting.

    :param summary_paths: Sequence[str | Path]: Summary CSV files
    :param path: str | Path: Output CSV
    :return: The merged table
    :doc-author: Trelent
    """
    if not summary_paths:
        raise DataError("no summary files to merge")
    frames = []
    rounds = None
    for summary_path in summary_paths:
        frame, _ = read_summary(summary_path)
        if rounds is None:
            rounds = len(frame)
        elif len(frame) != rounds:
            raise DataError(
                f"round-count mismatch: {summary_path} has {len(frame)} rounds, "
                f"expected {rounds}"
            )
        frames.append(
            pd.DataFrame(
                {
                    "variant": frame["variant"],
                    "round": frame["round"],
                    "mean": frame["mean_rev"],
                    "ci_lo": frame["mean_rev"] - frame["ci_half"],
                    "ci_hi": frame["mean_rev"] + frame["ci_half"],
                }
            )
        )
    merged = pd.concat(frames, ignore_index=True)[PLOT_COLUMNS]
    merged.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("wrote %d plot rows to %s", len(merged), path)
    return merged


def plot_svg(plot_data: pd.DataFrame, path: str | Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    for variant, group in plot_data.groupby("variant", sort=False):
        ax.plot(group["round"], group["mean"], label=f"Algorithm {variant}")
        ax.fill_between(group["round"], group["ci_lo"], group["ci_hi"], alpha=0.2)
    ax.set_xlabel("Round")
    ax.set_ylabel("Revenue")
    ax.grid()
    ax.legend(loc="best")
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


def remove_outputs(paths: Iterable[str | Path]) -> None:
    for path in paths:
        Path(path).unlink(missing_ok=True)


@contextmanager
def created_outputs(paths: Iterable[str | Path]) -> Iterator[None]:
    """
    The created_outputs function guards the writes of one command: when the block
    raises, the files among ``paths`` that did not exist on entry are removed.
    Files that were already there are left alone.

    :param paths: Iterable[str | Path]: Files the command may write
    :return: A context manager
    """
    fresh = [Path(path) for path in paths if not Path(path).exists()]
    try:
        yield
    except (RPOError, OSError):
        remove_outputs(fresh)
        raise
