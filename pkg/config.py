"""
Dispel Configuration
Numerics, concurrency and logging settings for the library and CLI
"""

import os
import logging
from typing import Optional
from pydantic_settings import BaseSettings
from functools import lru_cache


class Settings(BaseSettings):

    # ==================== APPLICATION ====================
    APP_NAME: str = "Dispel"
    APP_VERSION: str = "1.0.0"
    ENV: str = "dev"            # dev | ci | prod

    # ==================== LOGGING ====================
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "text"    # text | json

    # ==================== CONCURRENCY ====================
    # Caps the worker pool; None means one worker per logical core
    DISPEL_THREADS: Optional[int] = None

    # ==================== NUMERICS ====================
    GRAM_BLOCK_ROWS: int = 4096
    POWER_ITERATIONS: int = 30
    STEP_SAFETY: float = 0.9
    DIVERGENCE_FACTOR: float = 10.0
    RIDGE_PIVOT_FLOOR: float = 1e-12

    # ==================== PIPELINE ====================
    LOGREG_MAX_ITER: int = 2000
    LOGREG_TOL: float = 1e-6
    SGD_BATCH_SIZE: int = 64
    DEFAULT_SUBSET_REPEATS: int = 10

    # ==================== THEORY ====================
    # Picked by the Monte Carlo adjudication run (see engine/theory.py)
    DEFAULT_VARIANT: str = "derivation_consistent"

    class Config:
        env_file = ".env"
        case_sensitive = True

    @property
    def worker_count(self) -> int:
        if self.DISPEL_THREADS is not None:
            return max(1, self.DISPEL_THREADS)
        return os.cpu_count() or 1


@lru_cache()
def get_settings() -> Settings:
    return Settings()


settings = get_settings()


def validate_runtime_config():
    """
    Warn about odd-but-legal settings; never raises.
    """
    warnings = []
    cores = os.cpu_count() or 1

    if settings.DISPEL_THREADS is not None and settings.DISPEL_THREADS > cores:
        warnings.append(
            f"DISPEL_THREADS={settings.DISPEL_THREADS} exceeds the {cores} available cores"
        )

    if settings.DISPEL_THREADS is not None and settings.DISPEL_THREADS < 1:
        warnings.append("DISPEL_THREADS < 1, falling back to a single worker")

    if settings.STEP_SAFETY >= 1.0:
        warnings.append("STEP_SAFETY >= 1: gradient descent may oscillate or diverge")

    if settings.LOG_FORMAT not in ("json", "text"):
        warnings.append(f"Unknown LOG_FORMAT={settings.LOG_FORMAT!r}, using text")

    for w in warnings:
        logging.getLogger("config").warning(w)

    return True
