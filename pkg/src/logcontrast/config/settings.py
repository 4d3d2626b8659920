from pathlib import Path
from typing import Final
from typing import final

from pydantic import Field
from pydantic_settings import BaseSettings
from pydantic_settings import SettingsConfigDict


@final
class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="logcontrast_", env_file=".env")

    log_filename: Path = Path("logcontrast.log.jsonl")
    max_workers: int = Field(default=4, ge=1)
    rank_tolerance: float = Field(default=1e-10, gt=0)
    zero_sum_tolerance: float = Field(default=1e-8, gt=0)
    support_threshold: float = Field(default=0.90, ge=0.5, le=1)


settings: Final = Settings()
