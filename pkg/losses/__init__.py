"""Training objectives: detection, OIM re-ID, semantic-region alignment and multi-level identification."""

from losses.alignment import ID_LOGIT_SCALE, sra_id_loss, sra_obj_loss
from losses.bundle import (
    ABLATION_PRESETS,
    LOSS_COMPONENTS,
    LossBundle,
    LossToggles,
    TrainingStepError,
    total_loss,
)
from losses.detection import detection_loss
from losses.identification import mil_box_loss, mil_fea_loss, mil_img_loss, multi_id_targets
from losses.oim import IdentityLookupTable, oim_loss
from losses.warnings import LOSS_WARNINGS, reset_loss_warnings

__all__ = [
    "ABLATION_PRESETS",
    "ID_LOGIT_SCALE",
    "IdentityLookupTable",
    "LOSS_COMPONENTS",
    "LOSS_WARNINGS",
    "LossBundle",
    "LossToggles",
    "TrainingStepError",
    "detection_loss",
    "mil_box_loss",
    "mil_fea_loss",
    "mil_img_loss",
    "multi_id_targets",
    "oim_loss",
    "reset_loss_warnings",
    "sra_id_loss",
    "sra_obj_loss",
    "total_loss",
]
