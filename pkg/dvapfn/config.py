"""
Application configuration and settings.
"""
from functools import lru_cache
from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict

from dvapfn import __version__


PACKAGE_DIR = Path(__file__).parent
BUNDLED_NETWORK_FILE = PACKAGE_DIR / "data" / "ieee33.csv"


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="DVAPFN_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Output
    RUNS_DIR: str = "runs"
    LOG_LEVEL: str = "INFO"

    # Data
    NETWORK_FILE: str = str(BUNDLED_NETWORK_FILE)

    # Application
    APP_TITLE: str = "Decoupled-Value Attention PFN toolkit"
    APP_VERSION: str = __version__


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


settings = get_settings()
