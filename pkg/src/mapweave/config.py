"""Configuration management for mapweave."""

import os
import re
from pathlib import Path
from typing import Any, Optional

import yaml
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class GridConfig(BaseModel):
    """Ego-centric BEV window shared by features, masks and metrics."""

    x_min: float = Field(default=-16.0, description="Window left edge (m)")
    x_max: float = Field(default=16.0, description="Window right edge (m)")
    y_min: float = Field(default=-16.0, description="Window bottom edge (m)")
    y_max: float = Field(default=16.0, description="Window top edge (m)")
    resolution: float = Field(default=0.5, gt=0, description="Cell size (m)")

    @model_validator(mode="after")
    def validate_extent(self) -> "GridConfig":
        """Validate the window is nondegenerate and divisible by the resolution."""
        for lo, hi, axis in ((self.x_min, self.x_max, "x"), (self.y_min, self.y_max, "y")):
            if hi <= lo:
                raise ValueError(f"Window {axis} extent must be positive")
            cells = (hi - lo) / self.resolution
            if abs(cells - round(cells)) > 1e-9:
                raise ValueError(f"Window {axis} extent must be a multiple of the resolution")
        return self


class ModelConfig(BaseModel):
    """Pipeline hyperparameters (desk-scale defaults)."""

    num_queries: int = Field(default=16, ge=1, description="Detection queries N_q")
    num_points: int = Field(default=20, ge=2, description="Points per instance N_p")
    channels: int = Field(default=32, ge=4, description="Embedding width C")
    saqg_layers: int = Field(default=3, ge=1, description="Mask-attention layers L")
    decoder_blocks: int = Field(default=2, ge=1, description="Map decoder blocks D")
    ffn_hidden: int = Field(default=64, ge=1, description="Decoder feed-forward width")
    history_frames: int = Field(default=4, ge=1, description="STFG history length n")
    stfg_hidden: int = Field(default=128, ge=1, description="STFG MLP hidden width")
    stfg_hidden_layers: int = Field(default=2, ge=1, description="STFG MLP hidden layers")
    tau_d: float = Field(default=0.4, gt=0, lt=1, description="Detection threshold")
    tau_t: float = Field(default=0.5, gt=0, lt=1, description="Tracking threshold")
    tau_l: float = Field(default=0.5, gt=0, lt=1, description="Mask-attention threshold")
    beta: float = Field(default=0.9, ge=0, le=1, description="Memory decay factor")
    theta: float = Field(default=0.5, gt=0, lt=1, description="Memory validity threshold")
    k_max: int = Field(default=256, ge=1, description="Max guided cells per track")
    use_saqg: bool = Field(default=True, description="Semantic-aware query generation")
    use_hmg: bool = Field(default=True, description="History-map guidance")
    use_stfg: bool = Field(default=True, description="Short-term future guidance")


class LossConfig(BaseModel):
    """Loss weights."""

    w_cls: float = Field(default=2.0, ge=0)
    w_pts: float = Field(default=5.0, ge=0)
    w_score: float = Field(default=1.0, ge=0)
    lambda_dice: float = Field(default=2.0, ge=0)
    lambda_bce: float = Field(default=1.0, ge=0)


class OptimizerConfig(BaseModel):
    """Momentum SGD settings."""

    learning_rate: float = Field(default=1e-3, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    grad_clip: Optional[float] = Field(default=5.0, gt=0, description="Global norm clip")


class WorldConfig(BaseModel):
    """Synthetic scenario generator parameters."""

    frames: int = Field(default=10, ge=1, description="Frames per scenario")
    frame_period: float = Field(default=0.5, gt=0, description="Seconds between frames")
    speed: float = Field(default=4.0, ge=0, description="Ego speed (m/s)")
    yaw_rate: float = Field(default=0.0, description="Ego turn rate (rad/s)")
    n_lanes: int = Field(default=2, ge=1, description="Lanes on the road")
    lane_width: float = Field(default=3.5, description="Lane width (m)")
    n_crossings: int = Field(default=2, ge=0, description="Pedestrian crossings")
    crossing_depth: float = Field(default=3.0, gt=0, description="Crossing depth along road (m)")
    min_clip_length: float = Field(default=2.0, gt=0, description="Drop clipped instances shorter than this (m)")
    line_thickness: float = Field(default=1.0, gt=0, description="Raster line thickness (m)")
    noise: float = Field(default=0.1, ge=0, description="Feature noise sigma")
    dropout: float = Field(default=0.1, ge=0, lt=1, description="Occlusion patch probability")
    patch_cells: int = Field(default=8, ge=1, description="Occlusion patch size (cells)")
    signal_channels_per_class: int = Field(default=4, ge=1)

    @field_validator("lane_width")
    @classmethod
    def validate_lane_width(cls, v: float) -> float:
        """Validate the road has width."""
        if v <= 0:
            raise ValueError("Lane width must be positive (zero-width road is infeasible)")
        return v


class TrainingConfig(BaseModel):
    """Training loop settings."""

    epochs: int = Field(default=50, ge=0)
    seed: int = Field(default=0, description="Seed for parameters and shuffling")
    heldout_fraction: float = Field(
        default=0.25, ge=0, lt=1, description="Share of scenarios held out by ablations"
    )


class ProcessingConfig(BaseModel):
    """Scenario-level parallelism."""

    worker_count: int = Field(default=2, ge=1, description="Concurrent inference workers")


class LoggingConfig(BaseModel):
    """Logging configuration."""

    format: str = Field(default="text", description="Log format (json or text)")
    level: str = Field(default="info", description="Log level")
    output: Optional[str] = Field(default=None, description="Optional log file path")

    @field_validator("format")
    @classmethod
    def validate_format(cls, v: str) -> str:
        """Validate log format."""
        if v not in ("json", "text"):
            raise ValueError("Log format must be 'json' or 'text'")
        return v

    @field_validator("level")
    @classmethod
    def validate_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = ("trace", "debug", "info", "warning", "error", "critical")
        if v.lower() not in valid_levels:
            raise ValueError(f"Invalid log level. Must be one of: {', '.join(valid_levels)}")
        return v.lower()


class Config(BaseModel):
    """Main configuration model."""

    grid: GridConfig = Field(default_factory=GridConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    world: WorldConfig = Field(default_factory=WorldConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    processing: ProcessingConfig = Field(default_factory=ProcessingConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "Config":
        """Load configuration from YAML file.

        Sectioned documents (``model: {tau_d: 0.4}``), dotted keys
        (``model.tau_d: 0.4``) and bare field names (``tau_d: 0.4``, when
        the name belongs to exactly one section) are all accepted.

        Args:
            path: Path to YAML configuration file

        Returns:
            Config instance

        Raises:
            FileNotFoundError: If config file doesn't exist
            ValueError: If config is invalid
        """
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Configuration file not found: {path}")

        with open(path) as f:
            raw_config = yaml.safe_load(f)

        if raw_config is None:
            raw_config = {}

        raw_config = cls._substitute_env_vars(raw_config)

        return cls(**cls._unflatten(raw_config))

    @classmethod
    def _unflatten(cls, raw: dict[str, Any]) -> dict[str, Any]:
        """Fold dotted and bare keys into their sections."""
        sections = {
            name: field.annotation for name, field in cls.model_fields.items()
        }
        owners: dict[str, list[str]] = {}
        for section, model in sections.items():
            for field_name in model.model_fields:
                owners.setdefault(field_name, []).append(section)

        nested: dict[str, Any] = {}
        for key, value in raw.items():
            if key in sections:
                nested.setdefault(key, {}).update(value or {})
                continue
            if "." in key:
                section, field_name = key.split(".", 1)
            elif len(owners.get(key, [])) == 1:
                section, field_name = owners[key][0], key
            else:
                raise ValueError(f"Unknown or ambiguous configuration key: {key}")
            nested.setdefault(section, {})[field_name] = value
        return nested

    @staticmethod
    def _substitute_env_vars(obj: Any) -> Any:
        """Recursively substitute environment variables in configuration.

        Replaces ${VAR_NAME} with os.environ['VAR_NAME'].
        """
        if isinstance(obj, dict):
            return {key: Config._substitute_env_vars(value) for key, value in obj.items()}
        elif isinstance(obj, list):
            return [Config._substitute_env_vars(item) for item in obj]
        elif isinstance(obj, str):
            pattern = r"\$\{([^}]+)\}"

            def replace_var(match):
                var_name = match.group(1)
                value = os.environ.get(var_name)
                if value is None:
                    raise ValueError(
                        f"Environment variable '{var_name}' not found "
                        f"(referenced in configuration)"
                    )
                return value

            return re.sub(pattern, replace_var, obj)
        else:
            return obj

    @classmethod
    def from_defaults(cls) -> "Config":
        """Create configuration with default values."""
        return cls()

    def snapshot(self) -> dict[str, Any]:
        """Plain-data dump suitable for manifests."""
        return self.model_dump(mode="json")


class RuntimeSettings(BaseSettings):
    """Process-level settings read from ``MAPWEAVE_*`` environment variables."""

    model_config = SettingsConfigDict(env_prefix="MAPWEAVE_")

    output_root: Path = Field(default=Path("runs"), description="Default output root")
    log_level: Optional[str] = Field(default=None, description="Overrides logging.level")


def load_config(path: Optional[str | Path] = None) -> Config:
    """Load configuration from file or use defaults.

    Args:
        path: Optional path to configuration file. If None, uses defaults.

    Returns:
        Config instance
    """
    if path is None:
        return Config.from_defaults()

    return Config.from_yaml(path)
