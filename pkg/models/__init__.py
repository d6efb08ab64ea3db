from models.checkpoint import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint
from models.config import BackboneConfig
from models.contracts import ImageEncoder, TeacherEmbedder, TextEncoder
from models.crops import collect_identity_crops, crop_regions, cut_box, read_frame
from models.regions import (
    DetectionOutput,
    DetectionResult,
    FrameDetections,
    IdentityEmbedding,
    IdentityResult,
    RegionBatch,
    RegionSource,
)
from models.reid_teacher import ReIDTeacher
from models.search_net import FrameTargets, InputError, TrainingForward, VehicleSearchNet

__all__ = [
    "BackboneConfig",
    "CHECKPOINT_VERSION",
    "DetectionOutput",
    "DetectionResult",
    "FrameDetections",
    "FrameTargets",
    "IdentityEmbedding",
    "IdentityResult",
    "ImageEncoder",
    "InputError",
    "RegionBatch",
    "RegionSource",
    "ReIDTeacher",
    "TeacherEmbedder",
    "TextEncoder",
    "TrainingForward",
    "VehicleSearchNet",
    "collect_identity_crops",
    "crop_regions",
    "read_frame",
    "cut_box",
    "load_checkpoint",
    "save_checkpoint",
]
