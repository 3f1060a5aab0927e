import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import NamedTuple

import numpy as np
from dotenv import dotenv_values
from pydantic import ValidationError
from scipy import stats
from tqdm import tqdm

from src.conf.config import settings
from src.exceptions import ConfigError, DataError
from src.repository import results as repository_results
from src.schemas import (
    EstimatorKind,
    ExperimentConfig,
    OptimizerConfig,
    RevenueEstimate,
    TheoremCheck,
    Trajectory,
    TrialSummary,
    parse_grid,
)
from src.services import oracles
from src.services.market import BidSource, is_synthetic, parse_environment
from src.services.optimizer import optimize

logger = logging.getLogger(__name__)

# spawn key of the grid-search stream; trial streams use (trial,)
GRID_STREAM = 2**32

OUTPUT_FILES = ("trajectory.csv", "summary.csv", "averages.csv", "plot.csv", "config.txt")

NAIVE_DEMAND = {
    EstimatorKind.bid_model: EstimatorKind.bid_naive,
    EstimatorKind.quantile_model: EstimatorKind.quantile_naive,
}


class TrialResult(NamedTuple):
    trial: int
    trajectory: Trajectory
    revenues: np.ndarray


def _describe(err: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in error['loc']) or 'config'}: {error['msg']}"
        for error in err.errors()
    )


def build_config(values: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig(**values)
    except ValidationError as err:
        raise ConfigError(f"invalid config: {_describe(err)}") from None


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    """
    The load_config function reads a flat ``key=value`` experiment file.
    Comment lines start with ``#``; keyword overrides win over the file.

    :param path: str | Path: Config file
    :param overrides: Values taking precedence over the file, e.g. master_seed
    :return: A validated ExperimentConfig
    :doc-author: Trelent
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    bare = [key for key, value in values.items() if value is None]
    if bare:
        raise ConfigError(f"config keys without a value: {', '.join(bare)}")
    values.update({key: value for key, value in overrides.items() if value is not None})
    return build_config(values)


def resolve(config: ExperimentConfig) -> tuple[BidSource, OptimizerConfig]:
    """
    The resolve function builds the environment and the optimizer settings an
    experiment runs with.
    Unresponsive environments get the wider default perturbation and lose
    demand modelling, which relies on bids identifying the demand curve.

    :param config: ExperimentConfig: Validated experiment
    :return: The bid source and the OptimizerConfig shared by every trial
    """
    source = parse_environment(config.env, config.master_seed)
    estimator = config.estimator
    perturbation = config.perturbation
    if not source.response.responsive:
        if perturbation is None:
            perturbation = settings.no_response_perturbation
        if estimator in NAIVE_DEMAND:
            logger.warning(
                "demand modelling disabled for %s response, variant %s uses naive demand",
                source.response.variant,
                config.variant,
            )
            estimator = NAIVE_DEMAND[estimator]
    if config.demand_kind is not None:
        demand_kind = config.demand_kind
    else:
        demand_kind = "logistic" if is_synthetic(source) else "mlp"
    try:
        optimizer_config = OptimizerConfig(
            r_init=config.r_init,
            rounds=config.rounds,
            samples_per_arm=config.samples_per_arm,
            step_size=config.step_size,
            step_schedule=config.step_schedule,
            perturbation=perturbation or settings.perturbation,
            delta=config.delta,
            r_min=config.r_min,
            r_max=config.r_max,
            estimator=estimator,
            quantile=config.quantile,
            adaptive_quantile=config.adaptive_quantile,
            quantile_candidates=config.quantile_candidates,
            demand_kind=demand_kind,
        )
    except ValidationError as err:
        raise ConfigError(f"invalid optimizer settings: {_describe(err)}") from None
    return source, optimizer_config


def trial_streams(master_seed: int, trial: int) -> tuple[np.random.Generator, ...]:
    """Independent optimizer and revenue-evaluation streams of one trial."""
    sequence = np.random.SeedSequence(master_seed, spawn_key=(trial,))
    return tuple(np.random.default_rng(child) for child in sequence.spawn(2))


def run_trial(
    source: BidSource,
    optimizer_config: OptimizerConfig,
    trial: int,
    master_seed: int,
    revenue_eval_samples: int,
) -> TrialResult:
    """
    The run_trial function runs the optimizer once and evaluates the revenue of
    every visited reserve with fresh draws.

    :param source: BidSource: Environment
    :param optimizer_config: OptimizerConfig: Optimizer settings
    :param trial: int: Trial index, selects the random streams
    :param master_seed: int: Experiment seed
    :param revenue_eval_samples: int: Auctions per revenue evaluation
    :return: A TrialResult
    """
    optimizer_rng, revenue_rng = trial_streams(master_seed, trial)
    config = optimizer_config.model_copy(update={"seed": trial})
    trajectory = optimize(config, source, optimizer_rng)
    revenues = np.array(
        [
            oracles.revenue(source, record.reserve, revenue_eval_samples, revenue_rng).mean
            for record in trajectory.records
        ]
    )
    return TrialResult(trial, trajectory, revenues)


def _trial_worker(payload: tuple) -> TrialResult:
    return run_trial(*payload)


def run_trials(
    source: BidSource,
    optimizer_config: OptimizerConfig,
    config: ExperimentConfig,
    jobs: int = 1,
) -> list[TrialResult]:
    payloads = [
        (source, optimizer_config, trial, config.master_seed, config.revenue_eval_samples)
        for trial in range(config.trials)
    ]
    progress = dict(
        total=config.trials,
        desc=f"variant {config.variant}",
        disable=None if settings.progress else True,
    )
    if jobs <= 1:
        return [_trial_worker(payload) for payload in tqdm(payloads, **progress)]
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(tqdm(executor.map(_trial_worker, payloads), **progress))


def find_optimum(config: ExperimentConfig, source: BidSource) -> tuple[float, float]:
    rng = np.random.default_rng(
        np.random.SeedSequence(config.master_seed, spawn_key=(GRID_STREAM,))
    )
    r_star, mu_star = oracles.grid_search_optimum(
        source, parse_grid(config.grid), config.grid_samples, rng
    )
    logger.info("grid search optimum r*=%.4f mu*=%.5f", r_star, mu_star)
    if mu_star <= 0:
        raise DataError("optimal revenue is zero, nothing to normalise against")
    return r_star, mu_star


def _half_width(samples: np.ndarray) -> np.ndarray | float:
    if samples.shape[0] < 2:
        return np.zeros(samples.shape[1:]) if samples.ndim > 1 else 0.0
    return 1.96 * stats.sem(samples, axis=0)


def summarize(
    variant: str, revenues: np.ndarray, mu_star: float, r_star: float
) -> TrialSummary:
    """
    The summarize function reduces a trials-by-rounds revenue matrix to per-round
    means with 95% half-widths and to normalised averages over the first 20
    and 50 rounds.

    :param variant: str: Algorithm variant label
    :param revenues: np.ndarray: Revenue per trial (rows) and round (columns)
    :param mu_star: float: Optimal revenue used for normalisation
    :param r_star: float: Optimal reserve
    :return: A TrialSummary
    :doc-author: Trelent
    """
    revenues = np.atleast_2d(revenues)
    normalized = revenues / mu_star
    windows = {}
    for k in (20, 50):
        per_trial = normalized[:, :k].mean(axis=1)
        windows[k] = (float(per_trial.mean()), float(_half_width(per_trial)))
    mean = revenues.mean(axis=0)
    return TrialSummary(
        variant=variant,
        mean_rev=mean.tolist(),
        ci_half=np.asarray(_half_width(revenues)).tolist(),
        norm_rev=(mean / mu_star).tolist(),
        mu_star=mu_star,
        r_star=r_star,
        trials=revenues.shape[0],
        avg_rev_20=windows[20][0],
        ci_20=windows[20][1],
        avg_rev_50=windows[50][0],
        ci_50=windows[50][1],
    )


def run_experiment(
    config: ExperimentConfig, out_dir: str | Path, jobs: int = settings.jobs
) -> TrialSummary:
    """
    The run_experiment function runs every trial of an experiment and writes
    trajectory.csv, summary.csv, averages.csv, plot.csv and config.txt to out_dir.
    On failure the files this run created are removed; earlier files stay.

    :param config: ExperimentConfig: Validated experiment
    :param out_dir: str | Path: Output directory, created when missing
    :param jobs: int: Trials run in parallel
    :return: The TrialSummary
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in OUTPUT_FILES}
    logger.info(
        "experiment: variant %s on %s, %d trials x %d rounds",
        config.variant,
        config.env,
        config.trials,
        config.rounds,
    )
    with repository_results.created_outputs(paths.values()):
        source, optimizer_config = resolve(config)
        r_star, mu_star = find_optimum(config, source)
        trials = run_trials(source, optimizer_config, config, jobs)
        summary = summarize(
            config.variant, np.vstack([t.revenues for t in trials]), mu_star, r_star
        )
        repository_results.write_trajectories(
            [(t.trial, t.trajectory) for t in trials], paths["trajectory.csv"]
        )
        repository_results.write_summary(summary, paths["summary.csv"])
        repository_results.write_averages(summary, paths["averages.csv"])
        repository_results.emit_plot_data([paths["summary.csv"]], paths["plot.csv"])
        echo = config.model_dump()
        echo.update(
            perturbation=optimizer_config.perturbation,
            demand_kind=optimizer_config.demand_kind,
        )
        repository_results.write_config_echo(echo, paths["config.txt"])
    logger.info(
        "avg normalised revenue, first 50 rounds: %.4f +- %.4f",
        summary.avg_rev_50,
        summary.ci_50,
    )
    return summary


def curve(env: str, grid: str, samples: int, seed: int = 0) -> list[RevenueEstimate]:
    try:
        points = parse_grid(grid)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return oracles.revenue_curve(
        parse_environment(env, seed), points, samples, np.random.default_rng(seed)
    )


def diagnose(
    estimator: str,
    env: str,
    reserve: float,
    replications: int,
    perturbation: float | None = None,
    samples_per_arm: int | None = None,
    quantile: float | None = None,
    seed: int = 0,
) -> TheoremCheck:
    """
    The diagnose function measures one estimator and checks it against the bound
    that applies to it.

    :param estimator: str: Estimator name
    :param env: str: Environment spec
    :param reserve: float: Reserve price
    :param replications: int: Monte Carlo batches, at least 100
    :param perturbation: float | None: Relative perturbation
    :param samples_per_arm: int | None: Bids per arm
    :param quantile: float | None: Quantile for quantile truncation
    :param seed: int: Seed of the measurement
    :return: A TheoremCheck
    """
    if replications < 100:
        raise ConfigError("replications below 100")
    source = parse_environment(env, seed)
    beta = perturbation or settings.perturbation
    n = samples_per_arm or settings.samples_per_arm
    q = quantile or settings.quantile
    report = oracles.measure_estimator(
        estimator, source, reserve, beta, n, replications, np.random.default_rng(seed), q
    )
    check = oracles.check_theorem(
        report, oracles.theorem_bounds(estimator, source, reserve, beta, n, q)
    )
    logger.info("%s at r=%.3f: %s", estimator, reserve, check.verdict)
    return check
