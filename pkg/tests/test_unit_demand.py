import unittest

import numpy as np
import pytest

from src.exceptions import DataError, DemandModelError
from src.repository.observations import ObservationStore
from src.schemas import BidBatch, DemandModel, FitHyper
from src.services import demand
from src.services.market import load_empirical_distribution, sample_values

GRID = np.linspace(0.1, 0.9, 9)


def uniform_store(rng, size=10_000, draw=None) -> ObservationStore:
    store = ObservationStore()
    reserves = rng.uniform(0.1, 0.9, size)
    values = draw(size) if draw is not None else rng.random(size)
    for reserve, value in zip(reserves, values):
        store.append(reserve, np.array([value >= reserve]))
    return store


@pytest.fixture(scope="module")
def store():
    return uniform_store(np.random.default_rng(99))


class TestPredict(unittest.TestCase):
    def test_flat_logistic(self):
        model = DemandModel(kind="logistic", theta0=0.0, theta1=0.0)
        self.assertEqual(demand.predict(model, 0.7), 0.5)

    def test_vector_input(self):
        model = DemandModel(kind="logistic", theta0=1.0, theta1=-4.0)
        out = demand.predict(model, np.array([0.2, 0.8]))
        self.assertEqual(out.shape, (2,))
        self.assertGreater(out[0], out[1])

    def test_constant(self):
        model = DemandModel(kind="constant", level=1.0)
        np.testing.assert_array_equal(demand.predict(model, [0.1, 0.9]), [1.0, 1.0])

    def test_unfitted(self):
        with self.assertRaises(DemandModelError):
            demand.predict(None, 0.5)

    def test_mlp_shapes_are_checked(self):
        with self.assertRaises(ValueError):
            DemandModel(
                kind="mlp", hidden_weights=[1.0, 2.0], hidden_bias=[0.0], output_weights=[1.0]
            )


def test_all_cleared_saturates(rng):
    store = ObservationStore()
    for reserve in rng.uniform(0.1, 0.9, 200):
        store.append(reserve, np.ones(3, dtype=bool))
    model = demand.fit(store, "logistic")
    assert np.all(demand.predict(model, GRID) >= 0.99)


def test_empty_store():
    with pytest.raises(DataError):
        demand.fit(ObservationStore())


def test_unknown_kind(store):
    with pytest.raises(DemandModelError):
        demand.fit(store, "forest")


def test_logistic_recovers_uniform_demand(store):
    model = demand.fit(store, "logistic")
    assert model.kind == "logistic"
    assert model.trained_on == 10_000
    assert model.theta1 < 0
    assert np.mean(np.abs(demand.predict(model, GRID) - (1 - GRID))) <= 0.05
    assert demand.predict(model, 0.2) > demand.predict(model, 0.8)


def test_logistic_fit_defaults():
    hyper = FitHyper.for_kind("logistic")
    assert (hyper.steps, hyper.step_size) == (500, 0.5)


def test_mlp_recovers_uniform_demand(store):
    model = demand.fit(store, "mlp")
    assert model.kind == "mlp"
    assert model.hidden_weights.size == 15
    assert np.mean(np.abs(demand.predict(model, GRID) - (1 - GRID))) <= 0.05


def test_mlp_fits_two_mode_empirical_demand(tmp_path, rng):
    values = np.concatenate([rng.normal(0.3, 0.05, 5000), rng.normal(0.7, 0.05, 5000)])
    path = tmp_path / "two_modes.txt"
    path.write_text("\n".join(repr(x) for x in np.clip(values, 0, 1)), encoding="utf-8")
    dist = load_empirical_distribution(path, max_value=1.0)
    store = uniform_store(rng, draw=lambda size: sample_values(dist, rng, size))
    model = demand.fit(store, "mlp")
    exact = np.array([np.mean(dist.points >= r) for r in GRID])
    assert np.mean(np.abs(demand.predict(model, GRID) - exact)) <= 0.07


@pytest.mark.parametrize("kind", ["logistic", "mlp"])
def test_loss_never_increases(store, kind):
    hyper = FitHyper.for_kind(kind).model_copy(update={"steps": 200})
    _, history = demand.train(store, kind, hyper)
    assert len(history) > 1
    assert all(later <= earlier for earlier, later in zip(history, history[1:]))


def test_fit_is_deterministic(store):
    hyper = FitHyper(steps=100, step_size=0.5, seed=3)
    first = demand.fit(store, "mlp", hyper)
    second = demand.fit(store, "mlp", hyper)
    np.testing.assert_array_equal(first.hidden_weights, second.hidden_weights)
    np.testing.assert_array_equal(first.output_weights, second.output_weights)
    assert first.output_bias == second.output_bias


def test_model_text_survives_reload(store, tmp_path):
    model = demand.fit(store, "mlp", FitHyper(steps=50, step_size=0.5, seed=1))
    path = tmp_path / "demand.txt"
    demand.save_model(model, path)
    loaded = demand.load_model(path)
    assert loaded.kind == "mlp"
    np.testing.assert_array_equal(demand.predict(loaded, GRID), demand.predict(model, GRID))


def test_loads_rejects_bad_text():
    with pytest.raises(DataError):
        demand.loads("kind=spline\n")


def test_load_missing_file(tmp_path):
    with pytest.raises(DataError):
        demand.load_model(tmp_path / "absent.txt")


def test_holdout_error():
    batch = BidBatch(r_plus=0.5, r_minus=0.4, x_plus=[0.6, 0.0], x_minus=[0.5, 0.45])
    model = DemandModel(kind="constant", level=1.0)
    # observed clearing rates are 0.5 and 1.0
    assert demand.holdout_error(model, batch) == pytest.approx(0.25)
