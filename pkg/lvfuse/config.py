"""Pipeline configuration: JSON file, then command-line overrides, validated by pydantic."""

from __future__ import annotations

import copy
import logging
import os
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

import views as vw
from errors import ConfigError
from feedback import FeedbackParams
from localize import LocalizationConfig
from nn.vgg import VGGConfig
from services.json_store import read_json_dict, write_json_atomic
from trainer import TrainConfig

log = logging.getLogger(__name__)

THREADS_ENV = "LVFUSE_THREADS"
LOG_LEVEL_ENV = "LVFUSE_LOG_LEVEL"
_DEFAULT_THREADS = 1
_MAX_THREADS = 64
RUN_CONFIG_NAME = "run_config.json"


def env_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            return max(1, min(_MAX_THREADS, int(raw)))
        except ValueError:
            pass
    return _DEFAULT_THREADS


def env_log_level(default: str = "INFO") -> str:
    raw = os.environ.get(LOG_LEVEL_ENV, "").strip().upper()
    return raw if raw in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"} else default


def _desk_network() -> VGGConfig:
    return VGGConfig(channel_scale=1 / 16, input_hw=64)


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="ignore")

    data_root: Path | None = None
    atlas: Path | None = None
    checkpoint_dir: Path | None = None
    report_dir: Path | None = None


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="ignore")

    paths: PathsConfig = Field(default_factory=PathsConfig)
    views: str = "top,mid,2ch"
    backup_views: str = "top,mid"
    train: TrainConfig = Field(default_factory=TrainConfig)
    localization: LocalizationConfig = Field(default_factory=LocalizationConfig)
    network: VGGConfig = Field(default_factory=_desk_network)
    feedback: FeedbackParams = Field(default_factory=FeedbackParams)
    val_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)
    threads: int = Field(default=_DEFAULT_THREADS, ge=1, le=_MAX_THREADS)

    @field_validator("views", "backup_views")
    @classmethod
    def _valid_views(cls, v: str) -> str:
        return vw.format_view_set(vw.parse_view_set(v))

    @property
    def view_set(self) -> tuple[vw.ViewRole, ...]:
        return vw.parse_view_set(self.views)

    @property
    def backup_view_set(self) -> tuple[vw.ViewRole, ...]:
        return vw.parse_view_set(self.backup_views)


def _deep_merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _validate(data: dict[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_config(path: Path | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Defaults < config file < environment (threads) < explicit overrides."""
    data: dict[str, Any] = {"threads": env_threads()}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path} not found")
        stored = read_json_dict(Path(path))
        if not stored:
            raise ConfigError(f"config file {path} is empty or not a JSON object")
        data = _deep_merge(data, stored)
    if overrides:
        data = _deep_merge(data, overrides)
    config = _validate(data)
    log.debug("config: views=%s threads=%d seed=%d", config.views, config.threads, config.seed)
    return config


def nested(dotted: dict[str, Any]) -> dict[str, Any]:
    """{"train.epochs": 5, "seed": 1} -> {"train": {"epochs": 5}, "seed": 1}; None values are dropped."""
    out: dict[str, Any] = {}
    for key, value in dotted.items():
        if value is None:
            continue
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


def save_run_config(config: PipelineConfig, directory: Path, extra: dict[str, Any] | None = None) -> Path:
    path = Path(directory) / RUN_CONFIG_NAME
    payload = config.model_dump(mode="json")
    if extra:
        payload.update(extra)
    write_json_atomic(path, payload)
    return path


def load_run_config(directory: Path) -> tuple[PipelineConfig, dict[str, Any]]:
    path = Path(directory) / RUN_CONFIG_NAME
    if not path.is_file():
        raise ConfigError(f"{directory} has no {RUN_CONFIG_NAME}; was it produced by 'train'?")
    raw = read_json_dict(path)
    return _validate(raw), raw
