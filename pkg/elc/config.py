"""Pipeline configuration: one JSON file plus `--set key.path=value` overrides."""

import json
import logging
import os
from typing import Iterable, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from elc.bounce import BounceConfig
from elc.detector import DetectorConfig
from elc.errors import ConfigError
from elc.evaluation import EvalConfig
from elc.imaging import DEFAULT_FPS, DEFAULT_PATTERN
from elc.tracker import TrackerConfig

logger = logging.getLogger(__name__)

SEED_ENV = "ELC_SEED"


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fps: float = Field(DEFAULT_FPS, gt=0)
    frame_pattern: str = DEFAULT_PATTERN
    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    tracker: TrackerConfig = Field(default_factory=TrackerConfig)
    bounce: BounceConfig = Field(default_factory=BounceConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    court: Optional[str] = None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: Iterable[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"Override must look like key.path=value, got {item!r}")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Cannot set {key}: {part} is not a section")
        node[parts[-1]] = _parse_value(raw)
    return data


def load_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> PipelineConfig:
    data = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    data = apply_overrides(data, overrides)
    try:
        cfg = PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration:\n{exc}") from exc
    if path and cfg.court and not os.path.isabs(cfg.court):
        cfg = cfg.model_copy(update={"court": os.path.join(os.path.dirname(os.path.abspath(path)), cfg.court)})
    return cfg


def seed_from_env(default: int) -> int:
    value = os.environ.get(SEED_ENV)
    if value is None or value == "":
        return default
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {value!r}") from exc
