import numpy as np
import pytest

from src.schemas import BidBatch, ResponseModel, ValueDistribution
from src.services.market import Market


@pytest.fixture(scope="function")
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="module")
def uniform():
    return ValueDistribution(kind="uniform01")


@pytest.fixture(scope="module")
def perfect(uniform):
    return Market(dist=uniform, response=ResponseModel(variant="perfect", shading=0.4))


@pytest.fixture(scope="module")
def eps_bounded(uniform):
    return Market(
        dist=uniform,
        response=ResponseModel(variant="eps_bounded", shading=0.4, epsilon=0.05),
    )


@pytest.fixture(scope="module")
def equilibrium():
    return Market(
        dist=ValueDistribution(kind="power", k=2),
        response=ResponseModel(variant="equilibrium", n_bidders=2),
    )


@pytest.fixture(scope="module")
def mixture(uniform):
    return Market(
        dist=uniform,
        response=ResponseModel(variant="mixture", shading=0.4, p_perfect=0.9),
    )


@pytest.fixture(scope="module")
def no_response(uniform):
    return Market(dist=uniform, response=ResponseModel(variant="no_response", shading=0.4))


@pytest.fixture(scope="module")
def markets(perfect, eps_bounded, equilibrium, mixture, no_response):
    return {
        "perfect": perfect,
        "eps_bounded": eps_bounded,
        "equilibrium": equilibrium,
        "mixture": mixture,
        "no_response": no_response,
    }


@pytest.fixture(scope="function")
def batch():
    return BidBatch(
        r_plus=0.5,
        r_minus=0.4,
        x_plus=[0.0, 0.55, 0.6, 0.9],
        x_minus=[0.0, 0.45, 0.7, 0.9],
    )


@pytest.fixture(scope="function")
def small_experiment():
    return {
        "env": "perfect",
        "variant": "I",
        "rounds": "3",
        "samples_per_arm": "20",
        "trials": "2",
        "revenue_eval_samples": "200",
        "grid": "0.1:0.9:0.1",
        "grid_samples": "2000",
        "master_seed": "7",
    }


@pytest.fixture(scope="function")
def write_config(tmp_path):
    def write(values: dict, name: str = "experiment.cfg"):
        path = tmp_path / name
        lines = ["# experiment under test"] + [f"{k}={v}" for k, v in values.items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return write
