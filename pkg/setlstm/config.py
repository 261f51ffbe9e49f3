# ===========================================
# SET-LSTM - Configuration
# Training configuration and environment settings
# ===========================================

from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError


class ModelVariant(str, Enum):
    """Which layers are sparse"""

    set_lstm = "set_lstm"  # sparse embedding and sparse cell
    setc_lstm = "setc_lstm"  # sparse cell, dense embedding
    dense_lstm = "dense_lstm"  # fully connected baseline


class InitMode(str, Enum):
    """Weight values used when training on a fixed topology"""

    fresh = "fresh"
    same_as_checkpoint = "same-as-checkpoint"


class TrainConfig(BaseModel):
    """Training run configuration; config file keys are exactly these names"""

    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)

    # Model dimensions
    vocab_size: int = Field(default=20000, ge=3)
    embed_dim: int = Field(default=256, gt=0)
    hidden_dim: int = Field(default=256, gt=0)
    seq_len: int = Field(default=100, gt=0)
    n_classes: int = Field(default=2, ge=2)

    # Sparsity and rewiring
    epsilon: float = Field(default=10.0, gt=0)
    zeta: float = Field(default=0.2, ge=0.0, le=1.0)
    rewire_enabled: bool = True
    model_variant: ModelVariant = ModelVariant.set_lstm

    # Optimization
    lr: float = Field(default=0.001, gt=0)
    batch_size: int = Field(default=64, gt=0)
    epochs: int = Field(default=10, gt=0)
    seed: int = Field(default=0, ge=0)
    split_ratio: float = Field(default=0.8, gt=0.0, lt=1.0)

    # Fixed-topology runs
    fixed_topology: Optional[str] = None
    init_mode: InitMode = InitMode.fresh

    @field_validator("fixed_topology", mode="before")
    @classmethod
    def blank_is_none(cls, v: Any) -> Any:
        if isinstance(v, str) and not v.strip():
            return None
        return v

    @classmethod
    def from_mapping(cls, values: Dict[str, Any]) -> "TrainConfig":
        """Validate raw values, reporting problems as ConfigError"""
        unknown = sorted(set(values) - set(cls.model_fields))
        if unknown:
            raise ConfigError(
                f"unknown config keys: {', '.join(unknown)}",
                details={"unknown": unknown},
            )
        try:
            return cls(**values)
        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(p) for p in first.get("loc", ()))
            raise ConfigError(
                f"invalid value for '{field}': {first.get('msg')}", field=field
            ) from e

    def replace(self, **changes: Any) -> "TrainConfig":
        return TrainConfig.from_mapping({**self.to_dict(), **changes})

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def to_lines(self) -> List[str]:
        """Sorted key=value lines, the flat config file format"""
        lines = []
        for key, value in sorted(self.to_dict().items()):
            if value is None:
                value = ""
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return lines

    @property
    def sparse_embedding(self) -> bool:
        return self.model_variant == ModelVariant.set_lstm

    @property
    def sparse_cell(self) -> bool:
        return self.model_variant != ModelVariant.dense_lstm


class Settings(BaseSettings):
    """Environment overrides"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    SETLSTM_SEED: Optional[int] = Field(default=None, alias="SETLSTM_SEED")
    SETLSTM_LOG_LEVEL: str = Field(default="INFO", alias="SETLSTM_LOG_LEVEL")
    SETLSTM_JOBS: int = Field(default=1, alias="SETLSTM_JOBS")


def get_settings() -> Settings:
    """Read the environment afresh (tests patch it)"""
    return Settings()
