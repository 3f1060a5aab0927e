import io
import logging
from collections.abc import Callable
from pathlib import Path

import numpy as np
from dotenv import dotenv_values
from scipy.special import expit

from src.exceptions import DataError, DemandModelError
from src.repository.observations import ObservationStore
from src.schemas import BidBatch, DemandModel, FitHyper

logger = logging.getLogger(__name__)

MIN_STEP = 1e-12


def predict(model: DemandModel | None, r):
    """
    The predict function evaluates the fitted demand curve f(r), a probability in [0, 1].

    :param model: DemandModel | None: Fitted model
    :param r: Reserve or array of reserves
    :return: A float for scalar input, otherwise an array
    """
    if model is None:
        raise DemandModelError("demand model is not fitted")
    reserves = np.asarray(r, dtype=float)
    if model.kind == "constant":
        out = np.full(reserves.shape, model.level)
    elif model.kind == "logistic":
        out = expit(model.theta0 + model.theta1 * reserves)
    else:
        z = (reserves - model.input_shift) / model.input_scale
        hidden = np.maximum(
            z[..., None] * model.hidden_weights + model.hidden_bias, 0.0
        )
        out = expit(hidden @ model.output_weights + model.output_bias)
    return float(out) if out.ndim == 0 else out


def _bce(logits: np.ndarray, rate: np.ndarray, weight: np.ndarray) -> float:
    return float(np.sum(weight * (np.logaddexp(0.0, logits) - rate * logits)))


def _descend(
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    steps: int,
    step_size: float,
) -> tuple[np.ndarray, list[float]]:
    loss, grad = objective(params)
    history = [loss]
    for _ in range(steps):
        while step_size > MIN_STEP:
            candidate = params - step_size * grad
            candidate_loss, candidate_grad = objective(candidate)
            if candidate_loss <= loss:
                break
            step_size /= 2
        else:
            break
        params, loss, grad = candidate, candidate_loss, candidate_grad
        history.append(loss)
    return params, history


def train(
    store: ObservationStore, kind: str = "logistic", hyper: FitHyper | None = None
) -> tuple[DemandModel, list[float]]:
    """
    The train function fits a demand curve to every observation in the store by
    full-batch gradient descent on binary cross-entropy.
    Observations are grouped by reserve (the weighted loss equals the
    per-observation mean) and the reserve is standardised internally. The step
    size halves whenever a step would increase the loss, so the returned loss
    history is non-increasing.

    :param store: ObservationStore: Accumulated (reserve, cleared) pairs
    :param kind: str: ``logistic`` or ``mlp``
    :param hyper: FitHyper | None: Steps, step size and seed; defaults per kind
    :return: The fitted model and its loss history
    """
    if len(store) == 0:
        raise DataError("empty observation store")
    if kind not in ("logistic", "mlp"):
        raise DemandModelError(f"unknown demand model kind: {kind!r}")
    hyper = hyper or FitHyper.for_kind(kind)

    reserves, hits, totals = store.aggregated()
    rate = hits / totals
    weight = totals / totals.sum()
    overall = float(hits.sum() / totals.sum())
    if overall in (0.0, 1.0):
        logger.debug("single-class observations, constant demand %.0f", overall)
        return DemandModel(kind="constant", level=overall, trained_on=len(store)), []

    shift = float(np.sum(weight * reserves))
    scale = float(np.sqrt(np.sum(weight * (reserves - shift) ** 2)))
    scale = scale if scale > 1e-12 else 1.0
    z = (reserves - shift) / scale

    if kind == "logistic":
        def objective(params):
            logits = params[0] + params[1] * z
            residual = weight * (expit(logits) - rate)
            return _bce(logits, rate, weight), np.array([residual.sum(), residual @ z])

        params, history = _descend(objective, np.zeros(2), hyper.steps, hyper.step_size)
        model = DemandModel(
            kind="logistic",
            trained_on=len(store),
            theta0=float(params[0] - params[1] * shift / scale),
            theta1=float(params[1] / scale),
            final_loss=history[-1],
        )
        return model, history

    h = hyper.hidden
    rng = np.random.default_rng(hyper.seed)
    initial = rng.uniform(-hyper.init_scale, hyper.init_scale, size=3 * h + 1)

    def unpack(params):
        return params[:h], params[h : 2 * h], params[2 * h : 3 * h], params[3 * h]

    def objective(params):
        w1, b1, w2, b2 = unpack(params)
        pre = z[:, None] * w1 + b1
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ w2 + b2
        residual = weight * (expit(logits) - rate)
        back = residual[:, None] * w2 * (pre > 0)
        grad = np.concatenate(
            [back.T @ z, back.sum(axis=0), hidden.T @ residual, [residual.sum()]]
        )
        return _bce(logits, rate, weight), grad

    params, history = _descend(objective, initial, hyper.steps, hyper.step_size)
    w1, b1, w2, b2 = unpack(params)
    model = DemandModel(
        kind="mlp",
        trained_on=len(store),
        hidden_weights=w1,
        hidden_bias=b1,
        output_weights=w2,
        output_bias=float(b2),
        input_shift=shift,
        input_scale=scale,
        final_loss=history[-1],
    )
    return model, history


def fit(
    store: ObservationStore, kind: str = "logistic", hyper: FitHyper | None = None
) -> DemandModel:
    model, history = train(store, kind, hyper)
    logger.debug(
        "fitted %s demand on %d observations, loss %s",
        model.kind,
        model.trained_on,
        f"{history[-1]:.5f}" if history else "n/a",
    )
    return model


def holdout_error(model: DemandModel, batch: BidBatch) -> float:
    """Mean gap between predicted and observed clearing rates on a batch the model never saw."""
    observed = np.array(
        [np.mean(batch.x_plus >= batch.r_plus), np.mean(batch.x_minus >= batch.r_minus)]
    )
    predicted = predict(model, np.array([batch.r_plus, batch.r_minus]))
    return float(np.mean(np.abs(predicted - observed)))


ARRAY_FIELDS = ("hidden_weights", "hidden_bias", "output_weights")


def dumps(model: DemandModel) -> str:
    lines = []
    for key, value in model.model_dump().items():
        if value is None:
            continue
        if key in ARRAY_FIELDS:
            value = ";".join(repr(float(x)) for x in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> DemandModel:
    values = dotenv_values(stream=io.StringIO(text))
    fields = {}
    for key, value in values.items():
        if key in ARRAY_FIELDS:
            fields[key] = [float(x) for x in value.split(";")]
        else:
            fields[key] = value
    try:
        return DemandModel(**fields)
    except ValueError as err:
        raise DataError(f"invalid demand model text: {err}") from None


def save_model(model: DemandModel, path: str | Path) -> None:
    Path(path).write_text(dumps(model), encoding="utf-8")


def load_model(path: str | Path) -> DemandModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"demand model file not found: {path}")
    return loads(path.read_text(encoding="utf-8"))
