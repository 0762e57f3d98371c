"""
Workbench settings.

max_iterations = 10 and the 1e-6 slack follow the benchmark setup. The
quadrature order, softplus activation, learner hyperparameters and the
resolution schedule are local choices with no reference value; override
them freely.

Any field can be set from the environment as RAW_<FIELD NAME>, e.g.
RAW_QUAD_ORDER=12 or RAW_RESOLUTION_SCHEDULE=0.02,0.01. A .env file in the
working directory is read first.
"""
import dataclasses
import logging
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Tuple

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

ENV_PREFIX = 'RAW_'


@dataclass(frozen=True)
class Settings:
    # dynamics-core
    quad_order: int = 8
    max_grid_cells: int = 10_000_000
    snap_tolerance: float = 1e-9
    sanity_samples: int = 100_000

    # grid-verifier
    resolution: float = 0.02
    max_residual_evaluations: int = 100_000_000
    chunk_size: int = 20_000
    workers: int = 1
    violation_random_points: int = 8
    max_reported_counterexamples: int = 50

    # conditions
    slack: float = 1e-6
    as_precheck_threshold: float = 0.05

    # probability-oracle
    mc_samples: int = 100_000
    mc_horizon: int = 1_000
    mc_alpha: float = 1e-3
    mc_batch_size: int = 2_000
    vi_disturbance_points: int = 64

    # cegis-synthesizer
    max_iterations: int = 10
    restarts: int = 3
    initial_samples: int = 500
    learner_steps: int = 400
    learner_step_size: float = 0.01
    max_loss_margin: float = 0.05
    resolution_schedule: Tuple[float, ...] = (0.02, 0.01, 0.005)
    activation: str = 'softplus'
    seed: int = 0

    def replace(self, **changes) -> 'Settings':
        return dataclasses.replace(self, **changes)


def _coerce(raw: str, current: Any) -> Any:
    if isinstance(current, bool):
        return raw.strip().lower() in ('1', 'true', 'yes', 'on')
    if isinstance(current, int):
        return int(float(raw))
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(float(part) for part in raw.split(',') if part.strip())
    return raw


def load_settings(env_file: str = None) -> Settings:
    """Build settings from defaults, a .env file and RAW_* environment variables"""
    load_dotenv(env_file, override=False)
    defaults = Settings()
    overrides = {}
    for f in dataclasses.fields(Settings):
        raw = os.environ.get(ENV_PREFIX + f.name.upper())
        if raw is None:
            continue
        try:
            overrides[f.name] = _coerce(raw, getattr(defaults, f.name))
        except ValueError:
            logger.error(f"Ignoring {ENV_PREFIX}{f.name.upper()}={raw!r}: not a valid {type(getattr(defaults, f.name)).__name__}")
    if overrides:
        logger.info(f"Settings overridden from environment: {sorted(overrides)}")
    return dataclasses.replace(defaults, **overrides)


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return load_settings()
