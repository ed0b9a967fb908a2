"""
Configuration module for the Adversarial Debiasing Toolkit
Handles runtime settings using Pydantic Settings

Experiment hyperparameters (simulation, training, sweep grid) live in
app.schemas.ExperimentSpec and are loaded from a JSON config file; this
module only covers how the process runs: logging, output location and
the worker pool.
"""

from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import Field, field_validator
from typing import Literal
import logging
import os


class Settings(BaseSettings):
    """Application settings loaded from environment variables (prefix ADN_)"""

    # Application Settings
    debug: bool = Field(default=False, description="Log at DEBUG regardless of log_level")

    # Outputs
    output_dir: str = Field(default="./runs")

    # Worker pool
    worker_concurrency: int = Field(default=4, ge=1)
    worker_executor: Literal["process", "thread"] = Field(default="process")
    job_max_retries: int = Field(default=1, ge=1)

    # Logging
    log_level: str = Field(default="INFO")
    log_file: str = Field(default="./logs/app.log")

    model_config = SettingsConfigDict(
        env_prefix="ADN_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )

    @field_validator("log_level", mode="before")
    @classmethod
    def parse_log_level(cls, v):
        """Normalise and validate the log level name"""
        level = str(v).strip().upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"Unknown log level: {v}")
        return level

    def create_log_dir(self):
        """Create log directory if it doesn't exist"""
        log_dir = os.path.dirname(self.log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)


# Create settings instance
settings = Settings()
