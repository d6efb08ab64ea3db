"""Two-stage training: stage-1 tokens and teacher, stage-2 joint model, and checkpoint search."""

from losses.bundle import TrainingStepError
from training.audit import FrozenAudit, FrozenComponentError, audit_frozen, state_hash
from training.config import ConfigError, OimTarget, TrainConfig, load_config
from training.data import FrameDataset, MissingImagesError, seed_everything
from training.search import SearchRun, load_search_model, run_search
from training.stage1 import TeacherTrainingError, load_teacher, pretrain_teacher, save_teacher
from training.stage2 import Stage2Trainer, TrainState, train_stage2

__all__ = [
    "ConfigError",
    "FrameDataset",
    "FrozenAudit",
    "FrozenComponentError",
    "MissingImagesError",
    "OimTarget",
    "SearchRun",
    "Stage2Trainer",
    "TeacherTrainingError",
    "TrainConfig",
    "TrainState",
    "TrainingStepError",
    "audit_frozen",
    "load_config",
    "load_search_model",
    "load_teacher",
    "pretrain_teacher",
    "run_search",
    "save_teacher",
    "seed_everything",
    "state_hash",
    "train_stage2",
]
