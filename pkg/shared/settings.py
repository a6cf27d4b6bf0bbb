import os
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    LOG_LEVEL: str = "INFO"

    # Master-seed fallback when no --seed flag or file value is given (MIAB_PLAN_SEED)
    SEED: Optional[int] = None

    # Worker processes for campaigns and population evaluation; None means available parallelism
    WORKERS: Optional[int] = None

    # Upper bound on oracle enumerations, (F+M)^U * F^M * gridPoints^M
    ORACLE_BUDGET: int = 10_000_000

    SCHEMA_DIR: str = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "libs", "schemas")

    @property
    def effective_workers(self) -> int:
        return self.WORKERS if self.WORKERS else (os.cpu_count() or 1)

    model_config = SettingsConfigDict(env_prefix="MIAB_PLAN_", env_file=".env", extra="ignore", env_file_encoding="utf-8")


settings = Settings()
