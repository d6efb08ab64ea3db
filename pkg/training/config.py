"""
Training configuration.

YAML file -> pydantic models. `--set a.b=value` overrides are applied on
top of the file before validation; values are parsed as YAML scalars so
`--set optim.lr=0.01` and `--set toy_mode=true` behave as expected.
"""

import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from evaluation.report import EvalConfig
from losses.bundle import LossToggles
from models.config import BackboneConfig
from prompts.token_learning import PromptConfig


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration files and overrides."""
    pass


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OimTarget(str, Enum):
    PREDICTED = "predicted"
    GROUND_TRUTH = "ground_truth"
    BOTH = "both"


class DataConfig(_Config):
    build_dir: str = "data/build"
    # directory the manifests' image paths are relative to; defaults to the build's stats.json
    image_root: Optional[str] = None
    train_manifest: str = "train.jsonl"
    test_manifest: str = "test.jsonl"
    queries: str = "queries.jsonl"
    num_workers: int = Field(0, ge=0)

    def path(self, name: str) -> Path:
        return Path(self.build_dir) / getattr(self, name)


class OptimConfig(_Config):
    lr: float = Field(1e-3, gt=0)
    momentum: float = Field(0.9, ge=0)
    weight_decay: float = Field(5e-4, ge=0)
    # learning rate is multiplied by gamma once this fraction of the steps is done
    decay_at: float = Field(2.0 / 3.0, gt=0, le=1)
    gamma: float = Field(0.1, gt=0)
    grad_clip: Optional[float] = Field(None, gt=0)


class TeacherConfig(_Config):
    architecture_id: str = "resnet50"
    embedding_dim: int = 256
    input_size: Tuple[int, int] = (256, 256)
    epochs: int = Field(60, ge=0)
    batch_size: int = Field(32, ge=2)
    lr: float = Field(3.5e-4, gt=0)
    weight_decay: float = Field(5e-4, ge=0)
    # batch-hard triplet loss is added to identity cross-entropy when set
    triplet_margin: Optional[float] = Field(None, gt=0)
    seed: int = 0


class EncoderConfig(_Config):
    kind: str = "toy"
    model_name: str = "ViT-B-16"
    pretrained: str = "openai"
    text_dim: int = 64
    token_dim: int = 64
    seed: int = 0


class LossConfig(_Config):
    toggles: LossToggles = Field(default_factory=LossToggles)
    ablation: Optional[str] = None
    oim_on: OimTarget = OimTarget.BOTH
    oim_queue_size: int = Field(500, ge=0)
    oim_momentum: float = Field(0.5, ge=0, lt=1)
    oim_temperature: float = Field(1.0 / 30.0, gt=0)

    @model_validator(mode="after")
    def _apply_ablation(self):
        if self.ablation is not None:
            self.toggles = LossToggles.ablation(self.ablation)
        return self


class TrainConfig(_Config):
    seed: int = 0
    deterministic: bool = True
    device: str = Field(default_factory=lambda: os.getenv("DEVICE", "cpu"))
    toy_mode: bool = False
    batch_size: int = Field(5, ge=1)
    image_size: Tuple[int, int] = (900, 1500)
    max_epochs: int = Field(20, ge=1)
    max_steps: Optional[int] = Field(None, ge=1)
    backbone: Dict[str, Any] = Field(default_factory=dict)

    data: DataConfig = Field(default_factory=DataConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    teacher: TeacherConfig = Field(default_factory=TeacherConfig)
    prompts: PromptConfig = Field(default_factory=PromptConfig)
    encoders: EncoderConfig = Field(default_factory=EncoderConfig)
    losses: LossConfig = Field(default_factory=LossConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    output_dir: str = "runs/default"
    metrics_file: str = "metrics.jsonl"
    checkpoint_every: int = Field(500, ge=1)
    audit_every: int = Field(100, ge=1)
    log_every: int = Field(20, ge=1)

    def backbone_config(self) -> BackboneConfig:
        overrides = dict(self.backbone)
        overrides.setdefault("image_size", tuple(self.image_size))
        try:
            if self.toy_mode:
                return BackboneConfig.toy(**overrides)
            return BackboneConfig.reference(**overrides)
        except ValidationError as e:
            raise ConfigError(f"invalid backbone settings: {e}") from e

    @property
    def metrics_path(self) -> Path:
        return Path(self.output_dir) / self.metrics_file

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.output_dir) / "checkpoints"


def _set_path(tree: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"cannot set '{dotted}': '{key}' is not a section")
        node = child
    node[keys[-1]] = value


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like key=value")
        key, value = item.split("=", 1)
        _set_path(raw, key.strip(), yaml.safe_load(value))
    return raw


def load_config(path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> TrainConfig:
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                raw = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    raw = apply_overrides(raw, list(overrides))
    try:
        return TrainConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid config{f' {path}' if path else ''}: {e}") from e
