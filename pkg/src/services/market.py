import logging
import math
from collections import OrderedDict
from pathlib import Path
from typing import NamedTuple, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError

from src.conf.config import settings
from src.exceptions import ConfigError, DataError, MarketError
from src.schemas import ResponseModel, ValueDistribution

logger = logging.getLogger(__name__)


class Draws(NamedTuple):
    """Value and noise draws for a batch of auctions, reusable across reserves."""

    values: np.ndarray
    noise: np.ndarray


class BidSource(Protocol):
    def draw(self, rng: np.random.Generator, n: int) -> Draws: ...

    def bids_at(self, r: float, draws: Draws) -> np.ndarray: ...

    def sample_bids(self, r: float, n: int, rng: np.random.Generator) -> np.ndarray: ...


def cdf(dist: ValueDistribution, v, strict: bool = False) -> np.ndarray:
    """F(v) = Pr[V <= v], or Pr[V < v] when ``strict``; the two differ only at atoms."""
    v = np.asarray(v, dtype=float)
    if dist.kind == "uniform01":
        return np.clip(v, 0.0, 1.0)
    if dist.kind == "power":
        return np.clip(v, 0.0, 1.0) ** dist.k
    cumulative = _cumulative_weights(dist)
    index = np.searchsorted(dist.points, v, side="left" if strict else "right")
    return np.where(index == 0, 0.0, cumulative[np.maximum(index - 1, 0)])


def inverse_cdf(dist: ValueDistribution, u) -> np.ndarray:
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    if dist.kind == "uniform01":
        return u
    if dist.kind == "power":
        return u ** (1.0 / dist.k)
    cumulative = _cumulative_weights(dist)
    index = np.searchsorted(cumulative, u, side="left")
    return dist.points[np.minimum(index, dist.points.size - 1)]


def _cumulative_weights(dist: ValueDistribution) -> np.ndarray:
    if dist.weights is None:
        return np.arange(1, dist.points.size + 1) / dist.points.size
    cumulative = np.cumsum(dist.weights)
    return cumulative / cumulative[-1]


def sample_values(
    dist: ValueDistribution, rng: np.random.Generator, size: int
) -> np.ndarray:
    return inverse_cdf(dist, rng.random(size))


def sample_value(dist: ValueDistribution, rng: np.random.Generator) -> float:
    """
    The sample_value function draws one value v from F by inverse-CDF sampling.

    :param dist: ValueDistribution: The distribution of the maximum bidder value
    :param rng: np.random.Generator: Random stream owned by the caller
    :return: A value in [0, 1]
    """
    return float(inverse_cdf(dist, rng.random()))


def respond(model: ResponseModel, r: float, values, noise) -> np.ndarray:
    """
    The respond function evaluates the bid function b(r, v) for every value at a fixed reserve.
    All randomness arrives pre-drawn in ``noise`` (uniform on [0, 1]): the
    eps-bounded overshoot is ``epsilon * noise`` and the mixture bidder responds
    when ``noise < p_perfect``. Bids below the reserve are recorded as 0.

    :param model: ResponseModel: Response variant and its parameters
    :param r: float: Reserve price
    :param values: Values v in [0, 1]
    :param noise: Uniform draws, one per value
    :return: An array of bids
    """
    v = np.asarray(values, dtype=float)
    u = np.broadcast_to(np.asarray(noise, dtype=float), v.shape)
    base = model.shading * v
    clears = v >= r

    if model.variant == "equilibrium":
        n = model.n_bidders
        with np.errstate(divide="ignore", invalid="ignore"):
            bids = (r**n + (n - 1) * v**n) / (n * v ** (n - 1))
        return np.where(clears & (v > 0), bids, 0.0)

    perfect = np.where(clears, np.where(base >= r, base, r), 0.0)
    ignoring = np.where(base >= r, base, 0.0)
    if model.variant == "perfect":
        return perfect
    if model.variant == "eps_bounded":
        overshoot = np.minimum(r + model.epsilon * u, v)
        return np.where(clears, np.where(base >= r, base, overshoot), 0.0)
    if model.variant == "no_response":
        return ignoring
    return np.where(u < model.p_perfect, perfect, ignoring)


def bid(model: ResponseModel, r: float, v: float, rng: np.random.Generator) -> float:
    """
    The bid function returns the maximum bid b(r, v) for a single auction.

    :param model: ResponseModel: Response variant
    :param r: float: Reserve price, non-negative
    :param v: float: Maximum bidder value in [0, 1]
    :param rng: np.random.Generator: Stream for the variant's noise draw
    :return: The bid, 0 when the auction does not clear
    :doc-author: Trelent
    """
    if r < 0:
        raise MarketError(f"reserve must be non-negative, got {r}")
    if not 0 <= v <= 1:
        raise MarketError(f"value must lie in [0, 1], got {v}")
    return float(respond(model, r, v, rng.random()))


class Market(BaseModel):
    """A single representative bidder: values from ``dist``, bids from ``response``."""

    dist: ValueDistribution
    response: ResponseModel

    model_config = ConfigDict(frozen=True)

    def draw(self, rng: np.random.Generator, n: int) -> Draws:
        values = sample_values(self.dist, rng, n)
        return Draws(values, rng.random(n))

    def bids_at(self, r: float, draws: Draws) -> np.ndarray:
        return respond(self.response, r, draws.values, draws.noise)

    def sample_bids(self, r: float, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.bids_at(r, self.draw(rng, n))


def sample_bid_distribution(
    dist: ValueDistribution,
    model: ResponseModel,
    r: float,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    The sample_bid_distribution function draws n i.i.d. bids from B(r).
    A bid of 0 marks a lost auction.

    :param dist: ValueDistribution: Value distribution F
    :param model: ResponseModel: Bid function
    :param r: float: Reserve price
    :param n: int: Number of auctions
    :param rng: np.random.Generator: Random stream
    :return: An array of n bids
    """
    if n <= 0:
        return np.empty(0)
    return Market(dist=dist, response=model).sample_bids(r, n, rng)


class MegaBidder(BaseModel):
    """
    One synthetic bidder whose bid at reserve r is B_r^{-1}(U), where U is the
    probability level of the maximum component value under its law F, drawn
    uniformly inside the jump of F when that value is an atom, and B_r is the law
    of the maximum component bid. B_r is calibrated lazily per reserve; the most
    recent ``cache_size`` reserves are kept.
    """

    components: list[Market] = Field(min_length=1)
    resolution: int = Field(settings.mega_resolution, ge=2)
    n_calib: int = Field(settings.mega_calibration, ge=2)
    cache_size: int = Field(settings.mega_cache_size, ge=1)
    seed: int = 0

    _quantiles: OrderedDict = PrivateAttr(default_factory=OrderedDict)

    @property
    def dist(self) -> ValueDistribution:
        return self.components[0].dist

    @property
    def response(self) -> ResponseModel:
        return self.components[0].response

    def value_cdf(self, v, strict: bool = False) -> np.ndarray:
        total = np.ones_like(np.asarray(v, dtype=float))
        for component in self.components:
            total = total * cdf(component.dist, v, strict)
        return total

    def bid_quantiles(self, r: float) -> np.ndarray:
        key = float(r)
        if key in self._quantiles:
            self._quantiles.move_to_end(key)
            return self._quantiles[key]
        # the stream depends on r only, so an evicted reserve recalibrates identically
        spawn_key = (int(np.float64(key).view(np.uint64)),)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=spawn_key))
        max_bids = np.max(
            [c.sample_bids(key, self.n_calib, rng) for c in self.components], axis=0
        )
        quantiles = np.quantile(max_bids, np.linspace(0.0, 1.0, self.resolution))
        self._quantiles[key] = quantiles
        if len(self._quantiles) > self.cache_size:
            self._quantiles.popitem(last=False)
        logger.debug("calibrated mega-bidder at r=%.6g", key)
        return quantiles

    def draw(self, rng: np.random.Generator, n: int) -> Draws:
        values = np.max([sample_values(c.dist, rng, n) for c in self.components], axis=0)
        upper = self.value_cdf(values)
        lower = self.value_cdf(values, strict=True)
        return Draws(values, lower + rng.random(n) * (upper - lower))

    def bids_at(self, r: float, draws: Draws) -> np.ndarray:
        grid = np.linspace(0.0, 1.0, self.resolution)
        return np.interp(draws.noise, grid, self.bid_quantiles(r))

    def sample_bids(self, r: float, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.bids_at(r, self.draw(rng, n))


def build_mega_bidder(
    components: list[tuple[ValueDistribution, ResponseModel]],
    resolution: int,
    n_calib: int,
    rng: np.random.Generator,
) -> MegaBidder:
    """
    The build_mega_bidder function reduces several bidders to one whose bid law
    at every reserve equals the law of the maximum component bid.

    :param components: list: (ValueDistribution, ResponseModel) per bidder
    :param resolution: int: Size of the quantile grid per reserve
    :param n_calib: int: Joint draws used to calibrate each reserve
    :param rng: np.random.Generator: Stream the calibration seed is taken from
    :return: A MegaBidder
    :doc-author: Trelent
    """
    if not components:
        raise MarketError("mega-bidder needs at least one component")
    if n_calib < resolution:
        raise MarketError(
            f"insufficient calibration: n_calib={n_calib} < resolution={resolution}"
        )
    markets = [Market(dist=dist, response=model) for dist, model in components]
    return MegaBidder(
        components=markets,
        resolution=resolution,
        n_calib=n_calib,
        seed=int(rng.integers(2**63)),
    )


def load_empirical_distribution(
    path: str | Path, max_value: float | None = None
) -> ValueDistribution:
    """
    The load_empirical_distribution function reads one bid per line and returns
    the empirical distribution normalised to [0, 1].
    Lines starting with ``#`` and blank lines are skipped. Values are divided by
    ``max_value`` when it is declared, otherwise by the observed maximum.

    :param path: str | Path: Text file with one number per line
    :param max_value: float | None: Declared upper end of the value range
    :return: An empirical ValueDistribution
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"distribution file not found: {path}")
    values = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"{path}:{number}: not a number: {text!r}") from None
        if not math.isfinite(value) or value < 0:
            raise DataError(f"{path}:{number}: value outside declared range: {text}")
        if max_value is not None and value > max_value:
            raise DataError(
                f"{path}:{number}: value {text} exceeds declared maximum {max_value}"
            )
        values.append(value)
    if not values:
        raise DataError("empty distribution")
    scale = max_value if max_value is not None else max(values)
    if scale <= 0:
        raise DataError(f"{path}: distribution has no positive values")
    points = np.sort(np.asarray(values)) / scale
    logger.info("loaded %d values from %s", points.size, path)
    return ValueDistribution(kind="empirical", points=points)


PRESETS: dict[str, dict[str, str]] = {
    "perfect": {"dist": "uniform01", "response": "perfect"},
    "eps_bounded": {"dist": "uniform01", "response": "eps_bounded"},
    "equilibrium": {"dist": "power", "k": "2", "response": "equilibrium", "n_bidders": "2"},
    "mixture": {"dist": "uniform01", "response": "mixture"},
    "no_response": {"dist": "uniform01", "response": "no_response"},
}

RESPONSE_KEYS = {
    "gamma": "shading",
    "epsilon": "epsilon",
    "n_bidders": "n_bidders",
    "p_perfect": "p_perfect",
}
SPEC_KEYS = {
    "dist", "k", "path", "max", "response", "bidders", "resolution", "calibration",
    *RESPONSE_KEYS,
}


def parse_environment(spec: str, seed: int | None = None) -> Market | MegaBidder:
    """
    The parse_environment function builds a bid source from an environment spec string.
    A spec is an optional preset name followed by ``key=value`` overrides, all
    comma separated, e.g. ``perfect,gamma=0.3`` or
    ``dist=empirical,path=bids.txt,response=perfect``.

    :param spec: str: Environment spec
    :param seed: int | None: Seed of the mega-bidder calibration, settings.master_seed when None
    :return: A Market, or a MegaBidder when ``bidders`` is above 1
    """
    options: dict[str, str] = {}
    for position, token in enumerate(part.strip() for part in spec.split(",")):
        if not token:
            continue
        if "=" not in token:
            if position != 0 or token not in PRESETS:
                raise ConfigError(f"unknown environment preset: {token!r}")
            options.update(PRESETS[token])
            continue
        key, value = (item.strip() for item in token.split("=", 1))
        if key not in SPEC_KEYS:
            raise ConfigError(f"unknown environment key: {key!r}")
        options[key] = value
    if "response" not in options:
        raise ConfigError(f"environment {spec!r} names no response model")

    try:
        kind = options.get("dist", "uniform01")
        if kind == "empirical":
            if "path" not in options:
                raise ConfigError("empirical environment needs path=FILE")
            declared = float(options["max"]) if "max" in options else None
            dist = load_empirical_distribution(options["path"], declared)
        else:
            dist = ValueDistribution(kind=kind, k=float(options.get("k", 1.0)))
        response = ResponseModel(
            variant=options["response"],
            **{field: options[key] for key, field in RESPONSE_KEYS.items() if key in options},
        )
        bidders = int(options.get("bidders", 1))
        resolution = int(options.get("resolution", settings.mega_resolution))
        n_calib = int(options.get("calibration", settings.mega_calibration))
    except (ValidationError, ValueError) as err:
        raise ConfigError(f"invalid environment {spec!r}: {err}") from None

    if bidders < 1:
        raise ConfigError("bidders must be at least 1")
    if bidders == 1:
        return Market(dist=dist, response=response)
    return build_mega_bidder(
        [(dist, response)] * bidders,
        resolution,
        n_calib,
        np.random.default_rng(settings.master_seed if seed is None else seed),
    )


def is_synthetic(source: Market | MegaBidder) -> bool:
    return source.dist.kind != "empirical"
