import unittest
from unittest.mock import MagicMock

import numpy as np
import pytest
from scipy import stats

from src.exceptions import ConfigError, DataError, MarketError
from src.schemas import ResponseModel, ValueDistribution
from src.services.market import (
    Market,
    MegaBidder,
    bid,
    build_mega_bidder,
    cdf,
    inverse_cdf,
    is_synthetic,
    load_empirical_distribution,
    parse_environment,
    respond,
    sample_bid_distribution,
    sample_value,
    sample_values,
)


def scripted_rng(value: float) -> MagicMock:
    rng = MagicMock(spec=np.random.Generator)
    rng.random.return_value = value
    return rng


class TestBid(unittest.TestCase):
    def setUp(self) -> None:
        self.perfect = ResponseModel(variant="perfect", shading=0.4)
        self.rng = scripted_rng(0.0)

    def test_perfect_raises_bid_to_reserve(self):
        self.assertAlmostEqual(bid(self.perfect, 0.5, 0.8, self.rng), 0.5)

    def test_perfect_keeps_high_base_bid(self):
        self.assertAlmostEqual(bid(self.perfect, 0.3, 0.9, self.rng), 0.36)

    def test_perfect_value_below_reserve_loses(self):
        self.assertEqual(bid(self.perfect, 0.5, 0.4, self.rng), 0.0)

    def test_equilibrium_without_reserve(self):
        model = ResponseModel(variant="equilibrium", n_bidders=2)
        self.assertAlmostEqual(bid(model, 0.0, 1.0, self.rng), 0.5)

    def test_equilibrium_at_value_equal_reserve(self):
        model = ResponseModel(variant="equilibrium", n_bidders=2)
        self.assertAlmostEqual(bid(model, 0.6, 0.6, self.rng), 0.6)

    def test_equilibrium_zero_value(self):
        model = ResponseModel(variant="equilibrium", n_bidders=2)
        self.assertEqual(bid(model, 0.2, 0.0, self.rng), 0.0)

    def test_eps_bounded_overshoot(self):
        model = ResponseModel(variant="eps_bounded", shading=0.4, epsilon=0.05)
        # z = epsilon * 0.6 = 0.03
        self.assertAlmostEqual(bid(model, 0.5, 0.8, scripted_rng(0.6)), 0.53)

    def test_eps_bounded_capped_at_value(self):
        model = ResponseModel(variant="eps_bounded", shading=0.4, epsilon=0.05)
        self.assertAlmostEqual(bid(model, 0.5, 0.51, scripted_rng(1.0)), 0.51)

    def test_no_response_loses_below_reserve(self):
        model = ResponseModel(variant="no_response", shading=0.4)
        self.assertEqual(bid(model, 0.5, 0.8, self.rng), 0.0)

    def test_mixture_follows_noise(self):
        model = ResponseModel(variant="mixture", shading=0.4, p_perfect=0.9)
        self.assertAlmostEqual(bid(model, 0.5, 0.8, scripted_rng(0.2)), 0.5)
        self.assertEqual(bid(model, 0.5, 0.8, scripted_rng(0.95)), 0.0)

    def test_rejects_negative_reserve(self):
        with self.assertRaises(MarketError):
            bid(self.perfect, -0.1, 0.5, self.rng)

    def test_rejects_value_outside_unit_interval(self):
        with self.assertRaises(MarketError):
            bid(self.perfect, 0.1, 1.5, self.rng)


def test_sample_value_uniform_mean(uniform, rng):
    draws = sample_values(uniform, rng, 1_000_000)
    assert abs(draws.mean() - 0.5) <= 0.002
    single = sample_value(uniform, rng)
    assert 0.0 <= single <= 1.0


def test_sample_value_power_cdf(rng):
    dist = ValueDistribution(kind="power", k=2)
    draws = sample_values(dist, rng, 1_000_000)
    assert abs(np.mean(draws <= 0.5) - 0.25) <= 0.005
    assert cdf(dist, 0.5) == pytest.approx(0.25)


def test_sample_value_two_point_empirical(rng):
    dist = ValueDistribution(kind="empirical", points=[0.2, 0.8])
    draws = sample_values(dist, rng, 100_000)
    assert set(np.unique(draws)) == {0.2, 0.8}
    assert abs(np.mean(draws == 0.2) - 0.5) <= 0.01


def test_empirical_inverse_cdf_recovers_support():
    dist = ValueDistribution(
        kind="empirical", points=[0.1, 0.3, 0.3, 0.7, 1.0], weights=[1, 2, 1, 3, 1]
    )
    points = np.array([0.1, 0.3, 0.7, 1.0])
    np.testing.assert_array_equal(inverse_cdf(dist, cdf(dist, points)), points)
    assert cdf(dist, 0.05) == 0.0
    assert cdf(dist, 1.0) == pytest.approx(1.0)


def test_sample_bid_distribution_means(uniform, rng):
    model = ResponseModel(variant="perfect", shading=0.4)
    at_zero = sample_bid_distribution(uniform, model, 0.0, 1_000_000, rng)
    at_half = sample_bid_distribution(uniform, model, 0.5, 1_000_000, rng)
    assert abs(at_zero.mean() - 0.2) <= 0.001
    assert abs(at_half.mean() - 0.25) <= 0.002


def test_sample_bid_distribution_empty(uniform, rng):
    model = ResponseModel(variant="perfect")
    assert sample_bid_distribution(uniform, model, 0.3, 0, rng).size == 0


@pytest.mark.parametrize(
    "variant", ["perfect", "eps_bounded", "equilibrium", "mixture", "no_response"]
)
def test_bid_function_properties(markets, variant, rng):
    model = markets[variant].response
    size = 100_000
    r, v, u = rng.random(size), rng.random(size), rng.random(size)
    bids = respond(model, r, v, u)
    assert np.all(bids <= v + 1e-12)
    assert np.all(bids[v < r] == 0.0)
    if variant not in ("no_response", "mixture"):
        assert np.all(bids[v >= r] >= r[v >= r] - 1e-12)


@pytest.mark.parametrize("variant", ["perfect", "equilibrium", "mixture", "no_response"])
def test_bid_monotone_in_value(markets, variant, rng):
    model = markets[variant].response
    size = 100_000
    r, u = rng.random(size), rng.random(size)
    low = rng.random(size)
    high = low + (1 - low) * rng.random(size)
    assert np.all(respond(model, r, high, u) >= respond(model, r, low, u) - 1e-12)


def test_perfect_diminishing_sensitivity(perfect, rng):
    size = 100_000
    delta = 0.05
    r = 0.9 * rng.random(size)
    v_low = r + delta + (1 - r - delta) * rng.random(size)
    v_high = v_low + (1 - v_low) * rng.random(size)
    noise = np.zeros(size)
    model = perfect.response

    def shift(v):
        return respond(model, r + delta, v, noise) - respond(model, r, v, noise)

    assert np.all(shift(v_high) <= shift(v_low) + 1e-12)


class TestMegaBidder(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(2024)
        self.uniform = ValueDistribution(kind="uniform01")

    def test_two_truthful_bidders_match_max_of_uniforms(self):
        truthful = ResponseModel(variant="perfect", shading=1.0)
        mega = build_mega_bidder(
            [(self.uniform, truthful)] * 2, 1024, 100_000, self.rng
        )
        bids = mega.sample_bids(0.0, 100_000, self.rng)
        result = stats.kstest(bids, lambda x: np.clip(x, 0, 1) ** 2)
        self.assertLessEqual(result.statistic, 0.02)

    def test_two_perfect_bidders_match_direct_simulation(self):
        perfect = ResponseModel(variant="perfect", shading=0.4)
        mega = build_mega_bidder([(self.uniform, perfect)] * 2, 1024, 100_000, self.rng)
        market = Market(dist=self.uniform, response=perfect)
        direct = np.maximum(
            market.sample_bids(0.5, 100_000, self.rng),
            market.sample_bids(0.5, 100_000, self.rng),
        )
        mega_bids = mega.sample_bids(0.5, 100_000, self.rng)
        self.assertLessEqual(stats.ks_2samp(mega_bids, direct).statistic, 0.02)

    def test_single_component_is_identity(self):
        perfect = ResponseModel(variant="perfect", shading=0.4)
        mega = build_mega_bidder([(self.uniform, perfect)], 1024, 100_000, self.rng)
        market = Market(dist=self.uniform, response=perfect)
        statistic = stats.ks_2samp(
            mega.sample_bids(0.3, 100_000, self.rng),
            market.sample_bids(0.3, 100_000, self.rng),
        ).statistic
        self.assertLessEqual(statistic, 0.02)

    def test_calibration_is_cached_per_reserve(self):
        perfect = ResponseModel(variant="perfect", shading=0.4)
        mega = build_mega_bidder([(self.uniform, perfect)] * 2, 64, 1000, self.rng)
        first = mega.bid_quantiles(0.3)
        self.assertIs(mega.bid_quantiles(0.3), first)

    def test_calibration_cache_keeps_recent_reserves_only(self):
        perfect = ResponseModel(variant="perfect", shading=0.4)
        mega = build_mega_bidder([(self.uniform, perfect)] * 2, 64, 1000, self.rng)
        first = mega.bid_quantiles(0.2).copy()
        for r in np.linspace(0.3, 0.9, 3 * mega.cache_size):
            mega.bid_quantiles(r)
        self.assertEqual(len(mega._quantiles), mega.cache_size)
        np.testing.assert_array_equal(mega.bid_quantiles(0.2), first)

    def test_discrete_components_match_direct_simulation(self):
        two_point = ValueDistribution(kind="empirical", points=[0.2, 0.8])
        truthful = ResponseModel(variant="perfect", shading=1.0)
        mega = build_mega_bidder([(two_point, truthful)] * 2, 1024, 100_000, self.rng)
        market = Market(dist=two_point, response=truthful)
        direct = np.maximum(
            market.sample_bids(0.0, 100_000, self.rng),
            market.sample_bids(0.0, 100_000, self.rng),
        )
        mega_bids = mega.sample_bids(0.0, 100_000, self.rng)
        # max of two fair coins over {0.2, 0.8}: 0.8 with probability 3/4
        self.assertAlmostEqual(mega_bids.mean(), 0.65, delta=0.01)
        self.assertLessEqual(stats.ks_2samp(mega_bids, direct).statistic, 0.02)

    def test_probability_levels_are_uniform_with_atoms(self):
        two_point = ValueDistribution(kind="empirical", points=[0.2, 0.8])
        truthful = ResponseModel(variant="perfect", shading=1.0)
        mega = build_mega_bidder([(two_point, truthful)] * 2, 64, 1000, self.rng)
        levels = mega.draw(self.rng, 100_000).noise
        self.assertLessEqual(stats.kstest(levels, "uniform").statistic, 0.01)

    def test_insufficient_calibration(self):
        perfect = ResponseModel(variant="perfect")
        with self.assertRaises(MarketError):
            build_mega_bidder([(self.uniform, perfect)], 1024, 100, self.rng)

    def test_no_components(self):
        with self.assertRaises(MarketError):
            build_mega_bidder([], 16, 100, self.rng)


def test_load_two_point_file(tmp_path):
    path = tmp_path / "bids.txt"
    path.write_text("# winning bids\n0.2\n\n0.8\n", encoding="utf-8")
    dist = load_empirical_distribution(path, max_value=1.0)
    np.testing.assert_allclose(dist.points, [0.2, 0.8])
    normalised = load_empirical_distribution(path)
    np.testing.assert_allclose(normalised.points, [0.25, 1.0])


def test_load_uniform_file(tmp_path, rng):
    path = tmp_path / "uniform.txt"
    path.write_text("\n".join(repr(x) for x in rng.random(10_000)), encoding="utf-8")
    dist = load_empirical_distribution(path)
    assert stats.kstest(dist.points, "uniform").statistic <= 0.02


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("", encoding="utf-8")
    with pytest.raises(DataError, match="empty distribution"):
        load_empirical_distribution(path)


def test_load_names_bad_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0.1\nabc\n", encoding="utf-8")
    with pytest.raises(DataError, match=":2:"):
        load_empirical_distribution(path)


def test_load_rejects_values_above_declared_max(tmp_path):
    path = tmp_path / "bids.txt"
    path.write_text("0.5\n3.0\n", encoding="utf-8")
    with pytest.raises(DataError, match=":2:"):
        load_empirical_distribution(path, max_value=2.0)


def test_parse_environment_preset_with_override():
    source = parse_environment("perfect,gamma=0.3")
    assert isinstance(source, Market)
    assert source.response.shading == 0.3
    assert is_synthetic(source)


def test_parse_environment_equilibrium_preset():
    source = parse_environment("equilibrium")
    assert source.dist.kind == "power"
    assert source.response.n_bidders == 2


def test_parse_environment_mega_bidder():
    source = parse_environment("perfect,bidders=2,resolution=32,calibration=500")
    assert isinstance(source, MegaBidder)
    assert len(source.components) == 2


def test_parse_environment_empirical(tmp_path):
    path = tmp_path / "bids.txt"
    path.write_text("1\n2\n4\n", encoding="utf-8")
    source = parse_environment(f"dist=empirical,path={path},response=perfect")
    assert not is_synthetic(source)


@pytest.mark.parametrize(
    "spec", ["perfect,colour=red", "unknown", "dist=uniform01", "perfect,gamma=2"]
)
def test_parse_environment_errors(spec):
    with pytest.raises(ConfigError):
        parse_environment(spec)


def test_parse_environment_seeds_mega_bidder_calibration():
    spec = "perfect,bidders=2,resolution=32,calibration=500"
    assert parse_environment(spec, seed=1).seed == parse_environment(spec, seed=1).seed
    assert parse_environment(spec, seed=1).seed != parse_environment(spec, seed=2).seed


def test_cdf_strict_differs_only_at_atoms():
    two_point = ValueDistribution(kind="empirical", points=[0.2, 0.8])
    np.testing.assert_allclose(cdf(two_point, [0.2, 0.5, 0.8]), [0.5, 0.5, 1.0])
    np.testing.assert_allclose(cdf(two_point, [0.2, 0.5, 0.8], strict=True), [0.0, 0.5, 0.5])
    uniform = ValueDistribution(kind="uniform01")
    assert cdf(uniform, 0.3, strict=True) == cdf(uniform, 0.3)
