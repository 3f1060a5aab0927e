import math
from collections.abc import Sequence

import numpy as np

from src.exceptions import EstimatorError
from src.schemas import BidBatch, DemandModel, EstimatorKind, GradientEstimate
from src.services import demand


def kept_count(n: int, q: float) -> int:
    """Number of lowest bids kept by quantile truncation, floor(q * n)."""
    return int(math.floor(q * n + 1e-9))


def naive_gradient(batch: BidBatch) -> GradientEstimate:
    """
    The naive_gradient function is the two-point revenue slope: difference of
    mean revenue at r+ and r- over the reserve spacing.

    :param batch: BidBatch: Paired bids from B(r+) and B(r-)
    :return: An unbiased GradientEstimate
    """
    value = (batch.x_plus.sum() - batch.x_minus.sum()) / (batch.n * batch.delta)
    return GradientEstimate(
        value=float(value), estimator_kind=EstimatorKind.naive.value, n_used=2 * batch.n
    )


def naive_demand_gradient(batch: BidBatch) -> float:
    demand_plus = np.mean(batch.x_plus >= batch.r_plus)
    demand_minus = np.mean(batch.x_minus >= batch.r_minus)
    return float(
        (batch.r_plus * demand_plus - batch.r_minus * demand_minus) / batch.delta
    )


def bid_truncation_excess_gradient(batch: BidBatch) -> float:
    """
    The bid_truncation_excess_gradient function estimates the slope of the excess
    component E(r) from the r- arm alone. Bids above r+ contribute the constant
    r+ - r-, the rest their excess over r-.

    :param batch: BidBatch: Paired bids; only ``x_minus`` is read
    :return: A slope in [-1, 0]
    """
    x = batch.x_minus
    truncated = np.where(
        x <= batch.r_plus, np.maximum(x - batch.r_minus, 0.0), batch.delta
    )
    return float(-truncated.sum() / (batch.n * batch.delta))


def _sorted_excess(batch: BidBatch) -> tuple[np.ndarray, np.ndarray]:
    plus = np.maximum(np.sort(batch.x_plus, kind="stable") - batch.r_plus, 0.0)
    minus = np.maximum(np.sort(batch.x_minus, kind="stable") - batch.r_minus, 0.0)
    return plus, minus


def quantile_truncation_excess_gradient(batch: BidBatch, q: float) -> float:
    """
    The quantile_truncation_excess_gradient function keeps the lowest floor(q n)
    sorted bids of each arm (losing zeros included), differences their excess
    over the arm's reserve and adds the constant -(1 - q).

    :param batch: BidBatch: Paired bids
    :param q: float: Quantile threshold in (0, 1]
    :return: A slope
    :doc-author: Trelent
    """
    if not 0 < q <= 1:
        raise EstimatorError(f"quantile must lie in (0, 1], got {q}")
    kept = kept_count(batch.n, q)
    if kept == 0:
        raise EstimatorError("quantile keeps no samples")
    plus, minus = _sorted_excess(batch)
    difference = plus[:kept].sum() - minus[:kept].sum()
    return float(difference / (batch.n * batch.delta) - (1 - q))


def model_demand_gradient(
    model: DemandModel | None, r_plus: float, r_minus: float
) -> float:
    if model is None:
        raise EstimatorError("demand model is not fitted")
    f_plus, f_minus = demand.predict(model, np.array([r_plus, r_minus]))
    return float((r_plus * f_plus - r_minus * f_minus) / (r_plus - r_minus))


def compose_gradient(
    excess: float, demand_part: float, kind: str = "composed", n_used: int = 0
) -> GradientEstimate:
    if not (math.isfinite(excess) and math.isfinite(demand_part)):
        raise EstimatorError(
            f"non-finite gradient parts: excess={excess}, demand={demand_part}"
        )
    return GradientEstimate(
        value=excess + demand_part,
        excess_part=excess,
        demand_part=demand_part,
        estimator_kind=kind,
        n_used=n_used,
    )


def quantile_bias_variance(batch: BidBatch, q: float) -> tuple[float, float]:
    """
    The quantile_bias_variance function estimates the bias bound and the variance
    of quantile truncation at q from the batch itself.
    The bias bound replaces b(r+, t) - b(r-, t) by the gap between the kept
    order statistics of the two arms; the variance is the sample variance of the
    per-sample truncated excess differences divided by n.

    :param batch: BidBatch: Paired bids
    :param q: float: Candidate quantile
    :return: The pair (bias estimate, variance estimate)
    """
    kept = kept_count(batch.n, q)
    if kept == 0:
        raise EstimatorError(f"quantile {q} keeps no samples")
    x_plus = np.sort(batch.x_plus, kind="stable")
    x_minus = np.sort(batch.x_minus, kind="stable")
    bias = (1 - q) * (x_plus[kept - 1] - x_minus[kept - 1]) / batch.delta

    plus, minus = _sorted_excess(batch)
    terms = np.zeros(batch.n)
    terms[:kept] = (plus[:kept] - minus[:kept]) / batch.delta
    variance = terms.var(ddof=1) / batch.n if batch.n > 1 else 0.0
    return float(bias), float(variance)


def select_quantile(batch: BidBatch, candidates: Sequence[float]) -> float:
    """
    The select_quantile function picks the candidate quantile minimising the
    estimated squared bias plus variance. Exact ties go to the larger quantile.

    :param batch: BidBatch: Paired bids of the current round
    :param candidates: Sequence[float]: Quantiles to choose from
    :return: The selected quantile
    :doc-author: Trelent
    """
    if not candidates:
        raise EstimatorError("no candidate quantiles")
    best, best_score = None, math.inf
    for q in sorted(candidates, reverse=True):
        bias, variance = quantile_bias_variance(batch, q)
        score = bias**2 + variance
        if score < best_score:
            best, best_score = q, score
    return best


def estimate_gradient(
    batch: BidBatch,
    kind: EstimatorKind,
    q: float = 0.8,
    demand_model: DemandModel | None = None,
) -> GradientEstimate:
    """
    The estimate_gradient function applies one of the five configured estimators.
    Model-demand kinds without a fitted model fall back to the naive demand term.

    :param batch: BidBatch: Paired bids of the round
    :param kind: EstimatorKind: Which estimator to apply
    :param q: float: Quantile for quantile truncation
    :param demand_model: DemandModel | None: Model fitted on earlier rounds
    :return: A GradientEstimate
    """
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.naive:
        return naive_gradient(batch)

    if kind.excess == "bid":
        excess = bid_truncation_excess_gradient(batch)
    else:
        excess = quantile_truncation_excess_gradient(batch, q)

    if kind.demand == "model" and demand_model is not None:
        demand_part = model_demand_gradient(demand_model, batch.r_plus, batch.r_minus)
    else:
        demand_part = naive_demand_gradient(batch)
    return compose_gradient(excess, demand_part, kind=kind.value, n_used=2 * batch.n)
