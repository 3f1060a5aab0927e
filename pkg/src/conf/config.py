import logging.config

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # optimizer defaults
    step_size: float = 0.05
    perturbation: float = 0.1
    no_response_perturbation: float = 0.3
    max_perturbation: float = 0.9
    r_init: float = 0.1
    r_min: float = 0.1
    r_max: float = 5.0
    rounds: int = 200
    samples_per_arm: int = 50
    quantile: float = 0.8
    quantile_candidates: tuple[float, ...] = (0.6, 0.7, 0.8, 0.9, 0.95)

    # environments
    shading: float = 0.4
    epsilon: float = 0.05
    p_perfect: float = 0.9
    mega_resolution: int = 1024
    mega_calibration: int = 100_000
    mega_cache_size: int = 8

    # demand model fitting
    logistic_steps: int = 500
    logistic_step_size: float = 0.5
    mlp_hidden: int = 15
    # 500 steps at 0.05 leave the small-init network near a constant fit
    mlp_steps: int = 2000
    mlp_step_size: float = 0.5
    mlp_init_scale: float = 0.1

    # harness
    trials: int = 50
    revenue_eval_samples: int = 10_000
    grid: str = "0:1:0.01"
    grid_samples: int = 100_000
    oracle_samples: int = 10_000_000
    oracle_chunk: int = 1_000_000
    jobs: int = 1
    master_seed: int = 0
    progress: bool = True

    log_level: str = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="RPO_", env_file=".env", env_file_encoding="utf-8"
    )


settings = Settings()


LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


def setup_logging(level: str | None = None) -> None:
    """
    The setup_logging function configures the root logger once for the whole process.
    Every module logs through ``logging.getLogger(__name__)``; this only decides
    where the records go and how they look.

    :param level: str | None: Logging level name, defaults to ``settings.log_level``
    :return: None
    """
    logging.config.dictConfig(
        {
            "version": 1,
            "disable_existing_loggers": False,
            "formatters": {"generic": {"format": LOG_FORMAT, "datefmt": "%H:%M:%S"}},
            "handlers": {
                "console": {
                    "class": "logging.StreamHandler",
                    "stream": "ext://sys.stderr",
                    "formatter": "generic",
                }
            },
            "root": {"level": level or settings.log_level, "handlers": ["console"]},
        }
    )
