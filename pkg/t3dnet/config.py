"""
Конфигурация приложения.

Runtime knobs only; experiment hyperparameters live in TrainPlan files.
"""

import tempfile
from pathlib import Path

from pydantic import AliasChoices, Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Настройки из переменных окружения (and `.env`)."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
        populate_by_name=True,
    )

    # Logging
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    log_format: str = Field(default="console", alias="LOG_FORMAT")

    # Output
    output_dir: str = Field(
        default="runs",
        validation_alias=AliasChoices("T3DNET_OUTPUT_DIR", "OUTPUT_DIR"),
    )

    # Mesh-sample cache (OFF ingestion)
    cache_enabled: bool = Field(default=True, alias="T3DNET_CACHE_ENABLED")
    cache_dir: str = Field(default="", alias="T3DNET_CACHE_DIR")
    cache_max_mb: int = Field(default=512, alias="T3DNET_CACHE_MAX_MB")

    # Training runtime
    prefetch_depth: int = Field(default=2, ge=0, alias="T3DNET_PREFETCH_DEPTH")
    eval_batch_size: int = Field(default=32, ge=1, alias="T3DNET_EVAL_BATCH_SIZE")

    @property
    def cache_path(self) -> Path:
        """Каталог кэша сэмплированных мешей."""
        if self.cache_dir:
            return Path(self.cache_dir)
        return Path(tempfile.gettempdir()) / "t3dnet_mesh_cache"


# Глобальный экземпляр настроек
settings = Settings()
