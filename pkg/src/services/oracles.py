import logging
import math
from collections.abc import Callable, Iterator, Sequence
from typing import NamedTuple

import numpy as np

from src.conf.config import settings
from src.exceptions import ConfigError, MarketError
from src.schemas import (
    BiasVarianceReport,
    BidBatch,
    EstimatorKind,
    RevenueEstimate,
    TheoremCheck,
)
from src.services import estimators
from src.services.market import Market, inverse_cdf, respond
from src.services.optimizer import as_source

logger = logging.getLogger(__name__)


def _common_bids(
    source, reserves: Sequence[float], n: int, seed: int, chunk: int
) -> Iterator[list[np.ndarray]]:
    # every reserve sees the same value and noise draws
    rng = np.random.default_rng(seed)
    remaining = n
    while remaining > 0:
        size = min(chunk, remaining)
        draws = source.draw(rng, size)
        yield [source.bids_at(r, draws) for r in reserves]
        remaining -= size


def _moments(
    source, reserves: Sequence[float], n: int, seed: int, chunk: int
) -> list[tuple[float, float]]:
    sums = np.zeros(len(reserves))
    squares = np.zeros(len(reserves))
    for bids in _common_bids(source, reserves, n, seed, chunk):
        sums += [b.sum() for b in bids]
        squares += [(b * b).sum() for b in bids]
    means = sums / n
    variances = np.maximum(squares - n * means**2, 0.0) / (n - 1)
    return [(float(m), float(math.sqrt(v / n))) for m, v in zip(means, variances)]


def revenue(
    environment,
    r: float,
    n_samples: int,
    rng: np.random.Generator,
    chunk: int = settings.oracle_chunk,
) -> RevenueEstimate:
    """
    The revenue function estimates mu(r) as the mean bid over n_samples auctions,
    losing auctions counting 0.

    :param environment: Bid source or (ValueDistribution, ResponseModel) pair
    :param r: float: Reserve price
    :param n_samples: int: Number of auctions, at least 2
    :param rng: np.random.Generator: Stream the seed is taken from
    :param chunk: int: Draws held in memory at once
    :return: A RevenueEstimate
    """
    if n_samples < 2:
        raise ConfigError("revenue needs at least 2 samples")
    seed = int(rng.integers(2**63))
    mean, se = _moments(as_source(environment), [r], n_samples, seed, chunk)[0]
    return RevenueEstimate(reserve=r, mean=mean, std_error=se, n_samples=n_samples)


def closed_form_revenue(case: str, r: float, gamma: float = settings.shading) -> float:
    """
    Exact revenue for uniform values: ``uniform_perfect`` (linear shading gamma,
    perfect response) or ``uniform_equilibrium`` (max of two uniform values,
    two-bidder equilibrium bids).
    """
    if not 0 <= r <= 1:
        raise MarketError(f"reserve must lie in [0, 1], got {r}")
    if case == "uniform_perfect":
        if r <= gamma:
            return gamma / 2 * (1 - r**2 / gamma**2) + r * (r / gamma - r)
        return r * (1 - r)
    if case == "uniform_equilibrium":
        return r**2 * (1 - r) + (1 - r**3) / 3
    raise MarketError(f"unsupported closed-form case: {case!r}")


def revenue_curve(
    environment,
    grid: Sequence[float],
    n_samples: int,
    rng: np.random.Generator,
    chunk: int = settings.oracle_chunk,
) -> list[RevenueEstimate]:
    """
    The revenue_curve function estimates mu(r) at every grid point from one
    shared set of draws, so differences between points carry no sampling noise
    from the value draws.

    :param environment: Bid source or (ValueDistribution, ResponseModel) pair
    :param grid: Sequence[float]: Reserves to evaluate
    :param n_samples: int: Auctions per grid point
    :param rng: np.random.Generator: Stream the shared seed is taken from
    :param chunk: int: Draws held in memory at once
    :return: One RevenueEstimate per grid point, in grid order
    :doc-author: Trelent
    """
    grid = [float(r) for r in grid]
    if not grid:
        raise ConfigError("empty grid")
    if n_samples < 2:
        raise ConfigError("revenue needs at least 2 samples")
    seed = int(rng.integers(2**63))
    moments = _moments(as_source(environment), grid, n_samples, seed, chunk)
    return [
        RevenueEstimate(reserve=r, mean=mean, std_error=se, n_samples=n_samples)
        for r, (mean, se) in zip(grid, moments)
    ]


def grid_search_optimum(
    environment, grid: Sequence[float], n_samples: int, rng: np.random.Generator
) -> tuple[float, float]:
    curve = revenue_curve(environment, sorted(grid), n_samples, rng)
    best = int(np.argmax([point.mean for point in curve]))
    logger.debug("grid optimum r*=%.4f mu*=%.5f", curve[best].reserve, curve[best].mean)
    return curve[best].reserve, curve[best].mean


COMPONENTS: dict[str, Callable[[np.ndarray, float], np.ndarray]] = {
    "revenue": lambda bids, r: bids,
    "excess": lambda bids, r: np.maximum(bids - r, 0.0),
    "demand": lambda bids, r: r * (bids >= r),
}


def oracle_slope(
    environment,
    r_plus: float,
    r_minus: float,
    component: str = "revenue",
    n_samples: int = settings.oracle_samples,
    rng: np.random.Generator | None = None,
    chunk: int = settings.oracle_chunk,
) -> tuple[float, float]:
    """
    The oracle_slope function is the discrete derivative of revenue, of the
    excess component E(r) or of the demand component r D(r) between two
    reserves, evaluated on common draws at both reserves.

    :param environment: Bid source or (ValueDistribution, ResponseModel) pair
    :param r_plus: float: Upper reserve
    :param r_minus: float: Lower reserve
    :param component: str: ``revenue``, ``excess`` or ``demand``
    :param n_samples: int: Number of paired draws
    :param rng: np.random.Generator | None: Stream the seed is taken from
    :param chunk: int: Draws held in memory at once
    :return: The slope and its standard error
    """
    if component not in COMPONENTS:
        raise ConfigError(f"unknown revenue component: {component!r}")
    if not r_plus > r_minus:
        raise ConfigError("r_plus must exceed r_minus")
    g = COMPONENTS[component]
    rng = rng if rng is not None else np.random.default_rng()
    seed = int(rng.integers(2**63))
    delta = r_plus - r_minus
    total = square = 0.0
    for upper, lower in _common_bids(
        as_source(environment), [r_plus, r_minus], n_samples, seed, chunk
    ):
        diff = (g(upper, r_plus) - g(lower, r_minus)) / delta
        total += diff.sum()
        square += (diff * diff).sum()
    slope = total / n_samples
    variance = max(square - n_samples * slope**2, 0.0) / (n_samples - 1)
    return float(slope), float(math.sqrt(variance / n_samples))


def _naive(batch: BidBatch, q: float) -> float:
    return estimators.naive_gradient(batch).value


def _bid_truncation(batch: BidBatch, q: float) -> float:
    return estimators.bid_truncation_excess_gradient(batch)


def _quantile(batch: BidBatch, q: float) -> float:
    return estimators.quantile_truncation_excess_gradient(batch, q)


def _naive_demand(batch: BidBatch, q: float) -> float:
    return estimators.naive_demand_gradient(batch)


ESTIMATORS: dict[str, tuple[Callable[[BidBatch, float], float], str]] = {
    "naive": (_naive, "revenue"),
    "bid_truncation": (_bid_truncation, "excess"),
    "quantile": (_quantile, "excess"),
    "naive_demand": (_naive_demand, "demand"),
}


def _estimator(name: str) -> tuple[Callable[[BidBatch, float], float], str]:
    if name in ESTIMATORS:
        return ESTIMATORS[name]
    try:
        kind = EstimatorKind(name)
    except ValueError:
        choices = ", ".join([*ESTIMATORS, *(k.value for k in EstimatorKind)])
        raise ConfigError(
            f"unknown estimator {name!r}, expected one of: {choices}"
        ) from None
    return (lambda batch, q: estimators.estimate_gradient(batch, kind, q).value), "revenue"


def measure_estimator(
    estimator: str,
    environment,
    r: float,
    beta: float,
    n: int,
    replications: int,
    rng: np.random.Generator,
    q: float = settings.quantile,
    oracle_samples: int = settings.oracle_samples,
) -> BiasVarianceReport:
    """
    The measure_estimator function measures the bias and variance of a gradient
    estimator by Monte Carlo.
    Each replication draws a fresh batch of n bids at r+ = (1 + beta) r and at
    r- = (1 - beta) r. The bias is taken against the oracle slope of the
    component the estimator targets (revenue for full estimators, the excess
    component for truncation estimators, the demand component for naive demand).

    :param estimator: str: ``naive``, ``bid_truncation``, ``quantile``,
        ``naive_demand`` or an estimator kind
    :param environment: Bid source or (ValueDistribution, ResponseModel) pair
    :param r: float: Reserve price
    :param beta: float: Relative perturbation
    :param n: int: Samples per arm
    :param replications: int: Number of batches, at least 100
    :param rng: np.random.Generator: Random stream
    :param q: float: Quantile for quantile truncation
    :param oracle_samples: int: Paired draws behind the oracle slope
    :return: A BiasVarianceReport
    :doc-author: Trelent
    """
    if replications < 100:
        raise ConfigError("replications below 100")
    if not 0 < beta < 1:
        raise ConfigError(f"perturbation must lie in (0, 1), got {beta}")
    apply, component = _estimator(estimator)
    source = as_source(environment)
    r_plus, r_minus = (1 + beta) * r, (1 - beta) * r

    x_plus = source.sample_bids(r_plus, replications * n, rng).reshape(replications, n)
    x_minus = source.sample_bids(r_minus, replications * n, rng).reshape(replications, n)
    values = np.array(
        [
            apply(BidBatch(r_plus=r_plus, r_minus=r_minus, x_plus=xp, x_minus=xm), q)
            for xp, xm in zip(x_plus, x_minus)
        ]
    )
    oracle, oracle_se = oracle_slope(
        source, r_plus, r_minus, component, oracle_samples, rng
    )

    mean = float(values.mean())
    variance = float(values.var(ddof=1))
    fourth = float(np.mean((values - mean) ** 4))
    return BiasVarianceReport(
        estimator=estimator,
        reserve=r,
        perturbation=beta,
        samples_per_arm=n,
        empirical_mean=mean,
        empirical_bias=mean - oracle,
        bias_se=math.sqrt(variance / replications + oracle_se**2),
        empirical_variance=variance,
        variance_se=math.sqrt(max(fourth - variance**2, 0.0) / replications),
        oracle_slope=oracle,
        oracle_se=oracle_se,
        replications=replications,
    )


class Bounds(NamedTuple):
    theorem: str | None
    bias: float | None
    variance: float | None
    note: str = ""


def theorem_bounds(
    estimator: str, environment, r: float, beta: float, n: int, q: float = settings.quantile
) -> Bounds:
    """
    The theorem_bounds function returns the bias and variance bounds proven for
    an estimator, or empty bounds when the response model lies outside the
    estimator's assumptions.

    :param estimator: str: Estimator name as accepted by measure_estimator
    :param environment: Bid source or (ValueDistribution, ResponseModel) pair
    :param r: float: Reserve price
    :param beta: float: Relative perturbation
    :param n: int: Samples per arm
    :param q: float: Quantile for quantile truncation
    :return: Bounds
    """
    source = as_source(environment)
    response = source.response
    r_plus, r_minus = (1 + beta) * r, (1 - beta) * r
    delta = r_plus - r_minus
    bounded = response.variant in ("perfect", "eps_bounded")
    epsilon = response.epsilon if response.variant == "eps_bounded" else 0.0

    if estimator == "naive":
        return Bounds("unbiased two-point slope", 0.0, 1 / (2 * delta**2 * n))
    if estimator == "naive_demand":
        return Bounds("naive demand slope", 0.0, r_plus**2 / (2 * n * delta**2))
    if estimator == "bid_truncation":
        if not bounded:
            note = f"{response.variant} response breaks the bid-truncation assumptions"
            return Bounds(None, None, None, note)
        return Bounds("bid truncation", 2 * epsilon / delta, 1 / (4 * n))
    if estimator == "quantile":
        single = isinstance(source, Market) and source.dist.kind != "empirical"
        if not (bounded and single):
            note = "quantile bound needs one parametric bidder with bounded response"
            return Bounds(None, None, None, note)
        t = float(inverse_cdf(source.dist, q))
        t_tilde = float(inverse_cdf(source.dist, min(q + n ** (-2 / 3), 1.0)))
        spread = float(
            respond(response, r_plus, t, 0.0) - respond(response, r_minus, t, 0.0)
        )
        bias = (1 - q) * spread / delta + 6 * n ** (-2 / 3) + 2 * epsilon / delta
        variance = 2 * t_tilde**2 / (n * delta**2) * 1.5
        note = "variance slack 0.5 covers an unknown lower-order constant"
        return Bounds("quantile truncation", bias, variance, note)
    return Bounds(None, None, None, "no single bound covers a composed estimator")


def check_theorem(report: BiasVarianceReport, bounds: Bounds) -> TheoremCheck:
    """
    The check_theorem function compares a measurement with its bounds at a
    tolerance of three standard errors. Without bounds the verdict is BIASED when
    the bias is statistically nonzero and UNCHECKED otherwise.
    """
    if bounds.bias is None:
        nonzero = abs(report.empirical_bias) > 3 * report.bias_se
        return TheoremCheck(
            report=report,
            verdict="BIASED" if nonzero else "UNCHECKED",
            note=bounds.note,
        )
    bias_ok = abs(report.empirical_bias) <= bounds.bias + 3 * report.bias_se
    variance_ok = report.empirical_variance <= bounds.variance + 3 * report.variance_se
    return TheoremCheck(
        report=report,
        theorem=bounds.theorem,
        bias_bound=bounds.bias,
        variance_bound=bounds.variance,
        bias_ok=bias_ok,
        variance_ok=variance_ok,
        verdict="PASS" if bias_ok and variance_ok else "FAIL",
        note=bounds.note,
    )


def decomposition_residual(
    environment,
    r: float,
    n_samples: int,
    rng: np.random.Generator,
    same_sample: bool = True,
) -> float:
    """
    The decomposition_residual function returns |mu(r) - (E(r) + r D(r))| with
    every term estimated from n_samples auctions. On a shared sample the identity
    holds bid by bid; with ``same_sample=False`` each term gets its own draws.

    :param environment: Bid source or (ValueDistribution, ResponseModel) pair
    :param r: float: Reserve price
    :param n_samples: int: Auctions per term, at least 2
    :param rng: np.random.Generator: Random stream
    :param same_sample: bool: Share one sample between the three terms
    :return: The absolute residual
    :doc-author: Trelent
    """
    if n_samples < 2:
        raise ConfigError("decomposition needs at least 2 samples")
    source = as_source(environment)
    first = source.sample_bids(r, n_samples, rng)
    if same_sample:
        second = third = first
    else:
        second = source.sample_bids(r, n_samples, rng)
        third = source.sample_bids(r, n_samples, rng)
    mu = first.mean()
    excess = COMPONENTS["excess"](second, r).mean()
    demand_term = COMPONENTS["demand"](third, r).mean()
    return float(abs(mu - (excess + demand_term)))
