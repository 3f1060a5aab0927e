import math
from enum import Enum
from typing import Literal

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    computed_field,
    field_validator,
    model_validator,
)

from src.conf.config import settings

Variant = Literal["I", "II", "III", "IV", "V"]
DemandKind = Literal["logistic", "mlp"]


def _as_float_array(value) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.ndim != 1:
        raise ValueError("expected a one-dimensional sequence of numbers")
    return array


def parse_grid(text: str) -> np.ndarray:
    """
    The parse_grid function turns a ``LO:HI:STEP`` string into the grid of reserves it names.
    Both ends are included; the step count is rounded so that binary rounding
    of the step does not drop the upper end.

    :param text: str: Grid in ``LO:HI:STEP`` form, e.g. ``0:1:0.01``
    :return: An array of reserves
    """
    try:
        lo, hi, step = (float(part) for part in text.split(":"))
    except ValueError:
        raise ValueError(f"grid must look like LO:HI:STEP, got {text!r}") from None
    if step <= 0 or hi < lo or lo < 0:
        raise ValueError(f"grid {text!r} must satisfy 0 <= LO <= HI and STEP > 0")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 12)


class ValueDistribution(BaseModel):
    kind: Literal["uniform01", "power", "empirical"] = "uniform01"
    k: float = Field(1.0, gt=0)
    points: np.ndarray | None = None
    weights: np.ndarray | None = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("points", "weights", mode="before")
    @classmethod
    def to_array(cls, value):
        return None if value is None else _as_float_array(value)

    @model_validator(mode="after")
    def check_support(self):
        if self.kind != "empirical":
            return self
        if self.points is None or self.points.size == 0:
            raise ValueError("empirical distribution needs support points")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("support points must be finite")
        if self.points.min() < 0 or self.points.max() > 1:
            raise ValueError("support points must lie in [0, 1]")
        if np.any(np.diff(self.points) < 0):
            raise ValueError("support points must be sorted")
        if self.weights is not None:
            if self.weights.shape != self.points.shape:
                raise ValueError("weights and points differ in length")
            if np.any(self.weights < 0) or self.weights.sum() <= 0:
                raise ValueError("weights must be non-negative with positive total")
        return self


class ResponseModel(BaseModel):
    variant: Literal[
        "perfect", "eps_bounded", "equilibrium", "no_response", "mixture"
    ] = "perfect"
    shading: float = Field(settings.shading, gt=0, le=1)
    epsilon: float = Field(settings.epsilon, ge=0)
    n_bidders: int = Field(2, ge=1)
    p_perfect: float = Field(settings.p_perfect, ge=0, le=1)

    model_config = ConfigDict(frozen=True)

    @property
    def responsive(self) -> bool:
        return self.variant != "no_response"


class BidBatch(BaseModel):
    r_plus: float
    r_minus: float = Field(ge=0)
    x_plus: np.ndarray
    x_minus: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("x_plus", "x_minus", mode="before")
    @classmethod
    def to_array(cls, value):
        array = _as_float_array(value)
        if not np.all(np.isfinite(array)):
            raise ValueError("bids must be finite")
        if array.size and (array.min() < 0 or array.max() > 1 + 1e-12):
            raise ValueError("bids must lie in [0, 1]")
        return array

    @model_validator(mode="after")
    def check_arms(self):
        if not self.r_plus > self.r_minus:
            raise ValueError("r_plus must exceed r_minus")
        if self.x_plus.size == 0 or self.x_plus.size != self.x_minus.size:
            raise ValueError("both arms need the same, non-zero number of bids")
        return self

    @property
    def n(self) -> int:
        return int(self.x_plus.size)

    @property
    def delta(self) -> float:
        return self.r_plus - self.r_minus


class EstimatorKind(str, Enum):
    naive = "naive"
    bid_naive = "bid_trunc+naive_demand"
    quantile_naive = "quantile_trunc+naive_demand"
    bid_model = "bid_trunc+model_demand"
    quantile_model = "quantile_trunc+model_demand"

    @property
    def excess(self) -> str | None:
        if self is EstimatorKind.naive:
            return None
        return "bid" if self.value.startswith("bid") else "quantile"

    @property
    def demand(self) -> str | None:
        if self is EstimatorKind.naive:
            return None
        return "model" if self.value.endswith("model_demand") else "naive"


VARIANTS: dict[str, EstimatorKind] = {
    "I": EstimatorKind.naive,
    "II": EstimatorKind.bid_naive,
    "III": EstimatorKind.quantile_naive,
    "IV": EstimatorKind.bid_model,
    "V": EstimatorKind.quantile_model,
}


class GradientEstimate(BaseModel):
    value: float
    excess_part: float | None = None
    demand_part: float | None = None
    estimator_kind: str
    n_used: int = Field(ge=0)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_parts(self):
        if self.excess_part is not None and self.demand_part is not None:
            if not math.isclose(
                self.value, self.excess_part + self.demand_part, abs_tol=1e-12
            ):
                raise ValueError("value must equal excess_part + demand_part")
        return self


class DemandObservation(BaseModel):
    reserve: float = Field(ge=0)
    cleared: bool

    model_config = ConfigDict(frozen=True)


class DemandModel(BaseModel):
    kind: Literal["logistic", "mlp", "constant"]
    trained_on: int = Field(0, ge=0)
    theta0: float = 0.0
    theta1: float = 0.0
    level: float = Field(0.5, ge=0, le=1)
    hidden_weights: np.ndarray | None = None
    hidden_bias: np.ndarray | None = None
    output_weights: np.ndarray | None = None
    output_bias: float = 0.0
    input_shift: float = 0.0
    input_scale: float = Field(1.0, gt=0)
    final_loss: float | None = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("hidden_weights", "hidden_bias", "output_weights", mode="before")
    @classmethod
    def to_array(cls, value):
        return None if value is None else _as_float_array(value)

    @model_validator(mode="after")
    def check_parameters(self):
        scalars = [self.theta0, self.theta1, self.output_bias, self.input_shift]
        if not all(math.isfinite(x) for x in scalars):
            raise ValueError("demand model parameters must be finite")
        if self.kind == "mlp":
            arrays = [self.hidden_weights, self.hidden_bias, self.output_weights]
            if any(a is None for a in arrays):
                raise ValueError("mlp needs hidden and output weights")
            if len({a.size for a in arrays}) != 1:
                raise ValueError("mlp layer sizes disagree")
            if not all(np.all(np.isfinite(a)) for a in arrays):
                raise ValueError("demand model parameters must be finite")
        return self


class FitHyper(BaseModel):
    steps: int = Field(ge=0)
    step_size: float = Field(gt=0)
    seed: int = 0
    hidden: int = Field(settings.mlp_hidden, ge=1)
    init_scale: float = Field(settings.mlp_init_scale, gt=0)

    @classmethod
    def for_kind(cls, kind: str, seed: int = 0) -> "FitHyper":
        if kind == "mlp":
            return cls(
                steps=settings.mlp_steps, step_size=settings.mlp_step_size, seed=seed
            )
        return cls(
            steps=settings.logistic_steps,
            step_size=settings.logistic_step_size,
            seed=seed,
        )


class OptimizerConfig(BaseModel):
    r_init: float = Field(settings.r_init, gt=0)
    rounds: int = Field(settings.rounds, ge=0)
    samples_per_arm: int = Field(settings.samples_per_arm, ge=1)
    step_size: float = Field(settings.step_size, gt=0)
    step_schedule: Literal["constant", "inv_sqrt_T"] = "constant"
    perturbation: float = Field(settings.perturbation, gt=0, lt=1)
    delta: float | None = Field(None, gt=0)
    r_min: float = Field(settings.r_min, gt=0)
    r_max: float = Field(settings.r_max, gt=0)
    estimator: EstimatorKind = EstimatorKind.naive
    quantile: float = Field(settings.quantile, gt=0, le=1)
    adaptive_quantile: bool = False
    quantile_candidates: tuple[float, ...] = settings.quantile_candidates
    demand_kind: DemandKind = "logistic"
    seed: int = 0

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_domain(self):
        if not self.r_min <= self.r_init <= self.r_max:
            raise ValueError("need r_min <= r_init <= r_max")
        if not self.quantile_candidates:
            raise ValueError("quantile_candidates must not be empty")
        if any(not 0 < q <= 1 for q in self.quantile_candidates):
            raise ValueError("quantile candidates must lie in (0, 1]")
        return self

    @property
    def domain(self) -> tuple[float, float]:
        return self.r_min, self.r_max


class RoundRecord(BaseModel):
    round: int = Field(ge=1)
    reserve: float
    r_plus: float
    r_minus: float
    perturbation: float
    step_size: float
    gradient: GradientEstimate
    gradient_mapping: float
    r_next: float
    quantile: float | None = None
    demand_error: float | None = None

    model_config = ConfigDict(frozen=True)


class Trajectory(BaseModel):
    records: list[RoundRecord] = []
    config: OptimizerConfig

    @computed_field
    @property
    def min_gradient_mapping_sq(self) -> float | None:
        if not self.records:
            return None
        return min(record.gradient_mapping**2 for record in self.records)

    @property
    def reserves(self) -> np.ndarray:
        return np.array([record.reserve for record in self.records])


class Schedule(BaseModel):
    rounds: int = Field(ge=1)
    samples_per_arm: int = Field(ge=1)
    delta: float = Field(gt=0)


class RevenueEstimate(BaseModel):
    reserve: float
    mean: float
    std_error: float = Field(ge=0)
    n_samples: int = Field(ge=2)

    @field_validator("mean")
    @classmethod
    def check_mean(cls, value):
        if not -1e-12 <= value <= 1 + 1e-12:
            raise ValueError("mean revenue must lie in [0, 1]")
        return value


class BiasVarianceReport(BaseModel):
    estimator: str
    reserve: float
    perturbation: float
    samples_per_arm: int
    empirical_mean: float
    empirical_bias: float
    bias_se: float
    empirical_variance: float
    variance_se: float
    oracle_slope: float
    oracle_se: float
    replications: int = Field(ge=100)


class TheoremCheck(BaseModel):
    report: BiasVarianceReport
    theorem: str | None = None
    bias_bound: float | None = None
    variance_bound: float | None = None
    bias_ok: bool | None = None
    variance_ok: bool | None = None
    verdict: Literal["PASS", "FAIL", "BIASED", "UNCHECKED"]
    note: str = ""


class ExperimentConfig(BaseModel):
    env: str = "perfect"
    variant: Variant = "I"
    r_init: float = Field(settings.r_init, gt=0)
    rounds: int = Field(settings.rounds, ge=1)
    samples_per_arm: int = Field(settings.samples_per_arm, ge=1)
    step_size: float = Field(settings.step_size, gt=0)
    step_schedule: Literal["constant", "inv_sqrt_T"] = "constant"
    perturbation: float | None = Field(None, gt=0, lt=1)
    delta: float | None = Field(None, gt=0)
    r_min: float = Field(settings.r_min, gt=0)
    r_max: float = Field(settings.r_max, gt=0)
    quantile: float = Field(settings.quantile, gt=0, le=1)
    adaptive_quantile: bool = False
    quantile_candidates: tuple[float, ...] = settings.quantile_candidates
    demand_kind: DemandKind | None = None
    trials: int = Field(settings.trials, ge=1)
    revenue_eval_samples: int = Field(settings.revenue_eval_samples, ge=2)
    master_seed: int = Field(settings.master_seed, ge=0)
    grid: str = settings.grid
    grid_samples: int = Field(settings.grid_samples, ge=2)

    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("quantile_candidates", mode="before")
    @classmethod
    def split_candidates(cls, value):
        if isinstance(value, str):
            return tuple(float(part) for part in value.split(",") if part.strip())
        return value

    @field_validator("grid")
    @classmethod
    def check_grid(cls, value):
        parse_grid(value)
        return value

    @model_validator(mode="after")
    def check_domain(self):
        if not self.r_min <= self.r_init <= self.r_max:
            raise ValueError("need r_min <= r_init <= r_max")
        return self

    @property
    def estimator(self) -> EstimatorKind:
        return VARIANTS[self.variant]


class TrialSummary(BaseModel):
    variant: str
    mean_rev: list[float]
    ci_half: list[float]
    norm_rev: list[float]
    mu_star: float = Field(gt=0)
    r_star: float
    trials: int = Field(ge=1)
    avg_rev_20: float
    ci_20: float
    avg_rev_50: float
    ci_50: float

    @property
    def rounds(self) -> int:
        return len(self.mean_rev)
