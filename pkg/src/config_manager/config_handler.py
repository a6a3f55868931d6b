"""
Blueprint: Configuration Manager - Config Handler

This module manages pipeline configuration: defaults, the flat key=value
config file, the OCCREC_SEED environment fallback and command-line overrides.

Components:
1. PipelineConfig (defaults and validation rules)
2. Config file parsing / snapshot writing
3. Layered merge: defaults < file < env seed < flags
"""

import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..core.exceptions import ConfigError
from ..utils.logger import setup_logger

logger = setup_logger(__name__)

SEED_ENV_VAR = "OCCREC_SEED"


class PipelineConfig(BaseModel):
    """Every tunable of the pipeline; defaults are the published settings"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    M: int = Field(6, ge=1, description="Number of parts per image (4 horizontal + 2 vertical)")
    D: int = Field(256, ge=1, description="Part feature dimension")
    K_train: int = Field(30, ge=1, description="Neighbors per part when training the graph network")
    K_infer: int = Field(10, ge=1, description="Neighbors per part at inference")
    theta_train: float = Field(0.7, ge=-1.0, le=1.0, description="Similarity threshold when training")
    theta_infer: float = Field(0.7, ge=-1.0, le=1.0, description="Similarity threshold at inference")
    T: int = Field(2, ge=1, description="Graph network layers")
    eta: float = Field(0.3, gt=0.0, description="Triplet margin")
    learning_rate: float = Field(3.5e-4, gt=0.0, description="Initial Adam learning rate")
    lr_decay_epochs: Tuple[int, ...] = Field((40, 70), description="Epochs where the rate decays")
    lr_decay_factor: float = Field(0.1, gt=0.0, le=1.0, description="Decay multiplier")
    epochs: int = Field(120, ge=0, description="Training epochs")
    batch_persons: int = Field(16, ge=1, description="Persons per graph-network batch")
    sets_per_person: int = Field(4, ge=1, description="Neighbor sets per person per batch")
    weight_decay: float = Field(1.0, ge=0.0, description="L2 pull of the graph-network W matrices toward the identity")
    validation_fraction: float = Field(
        0.2, ge=0.0, lt=1.0, description="Share of training identities held out to pick the best epoch")
    encoder_batch_persons: int = Field(8, ge=2, description="Persons per encoder batch")
    encoder_images_per_person: int = Field(4, ge=2, description="Images per person per encoder batch")
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    seed: int = Field(0, ge=0, description="Master random seed")
    threads: int = Field(1, ge=1, description="Worker cap for per-query stages")
    reconstruct_gallery: bool = Field(True, description="Reconstruct gallery entries too (each excluding itself)")
    skip_occluded_neighbor_parts: bool = Field(True, description="Only neighbors with part k visible join part k's graph")
    filter_same_camera: bool = Field(False, description="Drop same-id same-camera gallery entries when scoring")
    holistic_query_parts: Tuple[int, ...] = Field(
        (0, 1), description="Parts a fully visible image searches with (empty: all parts); indices past M are ignored")

    @field_validator("lr_decay_epochs", "holistic_query_parts", mode="before")
    @classmethod
    def _parse_int_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            value = [v for v in value.replace(";", ",").split(",") if v.strip()]
            return tuple(int(v) for v in value)
        return value

    @field_validator("holistic_query_parts")
    @classmethod
    def _check_parts(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(p < 0 for p in value):
            raise ValueError("part indices must be >= 0")
        return tuple(sorted(set(value)))


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def parse_config_text(text: str) -> Dict[str, Any]:
    """Parse flat key=value lines ('#' starts a comment)"""
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in PipelineConfig.model_fields:
            raise ConfigError(f"config line {lineno}: unknown key '{key}'")
        lowered = value.lower()
        if lowered in _BOOL_TRUE | _BOOL_FALSE and PipelineConfig.model_fields[key].annotation is bool:
            values[key] = lowered in _BOOL_TRUE
        else:
            values[key] = value
    return values


def format_config(config: PipelineConfig) -> str:
    lines = []
    for key, value in config.model_dump().items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


class ConfigHandler:
    """Handles pipeline configuration management"""

    def __init__(self, config_path: Optional[Path] = None, environ: Optional[Mapping[str, str]] = None):
        self.config_path = Path(config_path) if config_path else None
        self.environ = os.environ if environ is None else environ

    def get_config(self, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
        """
        Build the effective configuration

        Args:
            overrides: Values from command-line flags (None entries are ignored)

        Returns:
            PipelineConfig: Validated configuration
        """
        try:
            values: Dict[str, Any] = {}
            if self.config_path is not None:
                if not self.config_path.exists():
                    raise FileNotFoundError(f"Config file not found: {self.config_path}")
                values.update(parse_config_text(self.config_path.read_text()))

            flags = {k: v for k, v in (overrides or {}).items() if v is not None}
            if "seed" not in values and "seed" not in flags and SEED_ENV_VAR in self.environ:
                values["seed"] = self.environ[SEED_ENV_VAR]
            values.update(flags)
            return PipelineConfig(**values)

        except ValidationError as e:
            first = e.errors()[0]
            field = ".".join(str(p) for p in first["loc"])
            logger.error(f"Invalid configuration: {field}: {first['msg']}")
            raise ConfigError(f"invalid configuration value for '{field}': {first['msg']}") from e
        except Exception as e:
            logger.error(f"Failed to read configuration: {str(e)}")
            raise

    def save_config(self, config: PipelineConfig, path: Optional[Path] = None) -> Path:
        """Write a snapshot in the same key=value format"""
        target = Path(path) if path else self.config_path
        if target is None:
            raise ValueError("No path to save the configuration to")
        target.write_text(format_config(config))
        logger.info(f"Saved configuration snapshot to {target}")
        return target
