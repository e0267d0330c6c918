"""Configuration management for hybrid ODE experiments."""

from __future__ import annotations

from pathlib import Path

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .exceptions import ConfigError

PARAM_CAP = 25_000
DEFAULT_SEED = 2024


class HybridSettings(BaseSettings):
    """Process-wide settings read from the environment and an optional .env file."""

    model_config = SettingsConfigDict(
        env_prefix="H2NCM_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    seed: int = Field(
        DEFAULT_SEED,
        description="Base seed for data generation, permutations and initialization",
    )
    jobs: int = Field(
        1,
        description="Number of worker processes for fold and grid jobs",
        ge=1,
    )
    runs_dir: Path = Field(
        Path("runs"),
        description="Directory under which run folders are created",
    )
    log_level: str = Field(
        "INFO",
        description="Root logging level used by the command-line interface",
    )
    param_cap: int = Field(
        PARAM_CAP,
        description="Exclusive upper bound on trainable parameters per model",
        gt=0,
    )
    debug: bool = Field(
        False,
        description="Log at DEBUG level and include tracebacks of failed commands",
    )

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate the logging level name."""
        level = v.strip().upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            msg = f"Unknown log level: {v}"
            raise ValueError(msg)
        return level

    def __repr__(self) -> str:
        """Return string representation of the settings."""
        return (
            f"HybridSettings("
            f"seed={self.seed}, "
            f"jobs={self.jobs}, "
            f"log_level={self.log_level}, "
            f"param_cap={self.param_cap})"
        )


def load_settings(env_file: str | Path | None = None) -> HybridSettings:
    """
    Load settings from the environment.

    Args:
        env_file: Path to environment file. If None, the current directory and its
            parents are searched for a .env file.

    Returns:
        HybridSettings instance

    Raises:
        ConfigError: If a setting is invalid

    """
    if env_file is None:
        current_dir = Path.cwd()
        for path in [current_dir, *current_dir.parents]:
            env_path = path / ".env"
            if env_path.exists():
                env_file = env_path
                break

    try:
        if env_file is not None:
            return HybridSettings(_env_file=str(env_file))  # type: ignore[call-arg]
        return HybridSettings()
    except ValidationError as e:
        msg = f"Failed to load settings: {e}"
        raise ConfigError(msg) from e
