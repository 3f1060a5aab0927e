import logging
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from src.conf.config import settings
from src.exceptions import EstimatorError, OptimizerError
from src.repository.observations import ObservationStore, record
from src.schemas import (
    BidBatch,
    DemandModel,
    FitHyper,
    OptimizerConfig,
    RoundRecord,
    Schedule,
    Trajectory,
)
from src.services import demand
from src.services.estimators import estimate_gradient, select_quantile
from src.services.market import BidSource, Market

logger = logging.getLogger(__name__)


def project(x: float, domain: tuple[float, float]) -> float:
    r_min, r_max = domain
    return float(min(max(x, r_min), r_max))


def gradient_mapping(
    r: float, g_hat: float, alpha: float, domain: tuple[float, float]
) -> float:
    """
    The gradient_mapping function is the projected step (project(r + alpha * g) - r) / alpha.
    It equals the gradient estimate whenever the step stays inside the domain.

    :param r: float: Current reserve
    :param g_hat: float: Gradient estimate
    :param alpha: float: Step size, positive
    :param domain: tuple[float, float]: Closed reserve interval
    :return: The gradient mapping
    """
    if alpha <= 0:
        raise OptimizerError(f"step size must be positive, got {alpha}")
    return (project(r + alpha * g_hat, domain) - r) / alpha


def step_size_at(config: OptimizerConfig) -> float:
    if config.step_schedule == "inv_sqrt_T":
        return config.step_size / math.sqrt(max(config.rounds, 1))
    return config.step_size


def perturbation_at(r: float, config: OptimizerConfig) -> float:
    """Relative perturbation beta_t; a configured spacing delta gives beta_t = delta / (2 r_t)."""
    if config.delta is None:
        return config.perturbation
    return min(config.delta / (2 * r), settings.max_perturbation)


class OptimizerState(BaseModel):
    """Mutable state carried between rounds of one optimizer run."""

    round: int = 0
    reserve: float
    store: ObservationStore
    demand_model: DemandModel | None = None

    model_config = ConfigDict(arbitrary_types_allowed=True)

    @classmethod
    def start(cls, config: OptimizerConfig) -> "OptimizerState":
        return cls(reserve=config.r_init, store=ObservationStore())


def as_source(environment) -> BidSource:
    if isinstance(environment, tuple):
        dist, model = environment
        return Market(dist=dist, response=model)
    return environment


def run_round(
    state: OptimizerState,
    environment,
    config: OptimizerConfig,
    rng: np.random.Generator,
) -> RoundRecord:
    """
    The run_round function plays one round: n_t auctions at each of r+ = (1 + beta) r
    and r- = (1 - beta) r, one gradient estimate, one projected ascent step.
    Model-demand estimators use the model fitted on earlier rounds only; this
    round's observations are recorded and the model refitted afterwards.

    :param state: OptimizerState: State after the previous round, updated in place
    :param environment: Bid source, or a (ValueDistribution, ResponseModel) pair
    :param config: OptimizerConfig: Run configuration
    :param rng: np.random.Generator: Stream the auctions are drawn from
    :return: The RoundRecord of the round
    :doc-author: Trelent
    """
    source = as_source(environment)
    kind = config.estimator
    t = state.round + 1
    r = state.reserve
    beta = perturbation_at(r, config)
    alpha = step_size_at(config)
    r_plus, r_minus = (1 + beta) * r, (1 - beta) * r

    n = config.samples_per_arm
    batch = BidBatch(
        r_plus=r_plus,
        r_minus=r_minus,
        x_plus=source.sample_bids(r_plus, n, rng),
        x_minus=source.sample_bids(r_minus, n, rng),
    )

    q = None
    if kind.excess == "quantile":
        q = config.quantile
        if config.adaptive_quantile:
            q = select_quantile(batch, config.quantile_candidates)

    demand_error = None
    if kind.demand == "model":
        if state.demand_model is None:
            logger.debug("round %d: no demand model yet, using naive demand", t)
        else:
            demand_error = demand.holdout_error(state.demand_model, batch)

    try:
        gradient = estimate_gradient(
            batch, kind, q if q is not None else config.quantile, state.demand_model
        )
    except EstimatorError as err:
        raise OptimizerError(f"round {t} at reserve {r:.6g}: {err.detail}") from err

    if kind.demand == "model":
        record(batch, state.store)
        state.demand_model = demand.fit(
            state.store,
            config.demand_kind,
            FitHyper.for_kind(config.demand_kind, seed=config.seed),
        )

    r_next = project(r + alpha * gradient.value, config.domain)
    entry = RoundRecord(
        round=t,
        reserve=r,
        r_plus=r_plus,
        r_minus=r_minus,
        perturbation=beta,
        step_size=alpha,
        gradient=gradient,
        gradient_mapping=gradient_mapping(r, gradient.value, alpha, config.domain),
        r_next=r_next,
        quantile=q,
        demand_error=demand_error,
    )
    logger.debug("round %d: r=%.5f g=%.5f -> %.5f", t, r, gradient.value, r_next)
    state.round, state.reserve = t, r_next
    return entry


def optimize(
    config: OptimizerConfig, environment, rng: np.random.Generator | None = None
) -> Trajectory:
    """
    The optimize function runs the zeroth-order projected gradient ascent for
    ``config.rounds`` rounds. Without an explicit stream the run is seeded from
    ``config.seed``, so equal configs give equal trajectories.

    :param config: OptimizerConfig: Run configuration
    :param environment: Bid source or (ValueDistribution, ResponseModel) pair
    :param rng: np.random.Generator | None: Optional stream
    :return: The Trajectory
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    source = as_source(environment)
    state = OptimizerState.start(config)
    records = [run_round(state, source, config, rng) for _ in range(config.rounds)]
    return Trajectory(records=records, config=config)


def _cube_root_of_square(n: int) -> int:
    target = n * n
    t = int(round(n ** (2 / 3)))
    while t**3 > target:
        t -= 1
    while (t + 1) ** 3 <= target:
        t += 1
    return t


def corollary_schedule(
    total_samples: int,
    preset: str,
    c: float = 1.0,
    epsilon: float = 0.0,
    epsilon_demand: float = 0.0,
    q: float = settings.quantile,
) -> Schedule:
    """
    The corollary_schedule function splits a budget of N samples into T rounds of
    n_t samples per arm and picks the perturbation spacing delta.

    ``cor1``: T = floor(N^(1/2)), delta = c N^(-1/8).
    ``cor2``: T = floor(N^(2/3)), delta = c (epsilon + epsilon_demand)^(1/2).
    ``cor3``: T = floor(N^(2/3)), delta = c (epsilon_demand + 1 - q)^(1/2).

    :param total_samples: int: Sample budget N, at least 4
    :param preset: str: ``cor1``, ``cor2`` or ``cor3``
    :param c: float: Constant in front of delta
    :param epsilon: float: Response overshoot bound
    :param epsilon_demand: float: Demand-model error bound
    :param q: float: Quantile used with quantile truncation
    :return: A Schedule
    :doc-author: Trelent
    """
    n = int(total_samples)
    if n < 4:
        raise OptimizerError(f"sample budget {n} too small for one sample per arm")
    if preset == "cor1":
        rounds = math.isqrt(n)
        delta = c * n ** (-1 / 8)
    elif preset == "cor2":
        rounds = _cube_root_of_square(n)
        delta = c * math.sqrt(epsilon + epsilon_demand)
    elif preset == "cor3":
        rounds = _cube_root_of_square(n)
        delta = c * math.sqrt(epsilon_demand + 1 - q)
    else:
        raise OptimizerError(f"unknown schedule preset: {preset!r}")
    if delta <= 0:
        raise OptimizerError(f"schedule {preset} gives non-positive delta")
    return Schedule(rounds=rounds, samples_per_arm=n // rounds, delta=delta)


def config_from_schedule(schedule: Schedule, **overrides) -> OptimizerConfig:
    fields = {
        "rounds": schedule.rounds,
        "samples_per_arm": schedule.samples_per_arm,
        "delta": schedule.delta,
        "step_schedule": "inv_sqrt_T",
    }
    fields.update(overrides)
    try:
        return OptimizerConfig(**fields)
    except ValidationError as err:
        raise OptimizerError(f"invalid schedule config: {err}") from None
