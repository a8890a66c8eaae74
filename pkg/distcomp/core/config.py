from typing import Optional
from functools import lru_cache
import logging

from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Library and CLI defaults, overridable through DISTCOMP_* environment variables."""

    # Logging
    LOG: str = "INFO"
    LOG_DIR: Optional[str] = None
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Grids and order checks
    GRID_SIZE: int = 201
    ORDER_TOL_CDF: float = 1e-8
    ORDER_TOL_INTEGRATED: float = 1e-6
    GRID_SNAP_TOL: float = 1e-12

    # Equilibrium solver
    KKT_TOL: float = 1e-3
    DAMPING: float = 0.5
    MAX_ITER: int = 5000
    INNER_ITER: int = 2000
    SUPPORT_EPS: float = 1e-6
    STEP_SIZE: float = 1.0
    MC_SAMPLES: int = 20000

    # Cost functionals
    QUADRATURE_STEPS: int = 64
    QUADRATURE_FAILURE_TOL: float = 1e-6

    # Market
    CONVOLUTION_REFINEMENT: int = 4
    TASTE_NODES: int = 64
    P_MAX: float = 2.0
    PRICE_SCAN_POINTS: int = 101

    # Runs
    THREADS: int = 1
    SCHEMA_VERSION: str = "1.0"

    model_config = SettingsConfigDict(
        case_sensitive=True,
        env_prefix="DISTCOMP_",
        env_file=".env",
        extra="ignore",
    )


@lru_cache()
def get_settings() -> Settings:
    """Create cached instance of settings."""
    resolved = Settings()
    logger.debug(f"Resolved settings: {resolved.model_dump()}")
    return resolved


# Global instance
settings = get_settings()
