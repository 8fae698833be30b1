"""
Runtime settings for the conveyor planner.

Values come from the environment (prefix ``CONVEYOR_``) or a local ``.env``
file. Only process-level knobs live here; everything that changes planning
results lives in the scenario JSON so it is covered by the config hash.
"""

from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="CONVEYOR_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    log_level: str = "info"
    log_dir: str = "logs"
    seed: Optional[int] = None
    workers: Optional[int] = None


settings = Settings()
