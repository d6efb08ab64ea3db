"""
Backbone and detector settings.

Two presets exist: `reference()` (ResNet-50 stem up to conv4, 14x14x1024
pooled regions) and `toy()` (ResNet-18 stem up to conv3, 7x7x128 pooled
regions) for laptop-scale runs and tests.
"""

from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, model_validator

# output channels of residual stages 1..4
_STAGE_CHANNELS: Dict[str, Tuple[int, int, int, int]] = {
    "resnet18": (64, 128, 256, 512),
    "resnet34": (64, 128, 256, 512),
    "resnet50": (256, 512, 1024, 2048),
    "resnet101": (256, 512, 1024, 2048),
}


class BackboneConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    architecture_id: str = "resnet50"
    # residual stages in the shared stem; the following stage becomes the branch heads
    stem_depth: int = 3
    stem_output_channels: int = 1024
    branch_output_channels: int = 2048
    pooled_height: int = 14
    pooled_width: int = 14
    embedding_dim: int = 256
    image_size: Tuple[int, int] = (900, 1500)

    anchor_sizes: Tuple[int, ...] = (32, 64, 128, 256, 512)
    aspect_ratios: Tuple[float, ...] = (0.5, 1.0, 2.0)
    rpn_pre_nms_train: int = 12000
    rpn_pre_nms_eval: int = 6000
    proposals_train: int = 300
    proposals_eval: int = 100
    rpn_nms_thresh: float = 0.7
    rpn_batch_size: int = 256
    rpn_positive_fraction: float = 0.5

    roi_batch_size: int = 128
    roi_positive_fraction: float = 0.5
    fg_iou_thresh: float = 0.5
    bg_iou_thresh: float = 0.5

    score_thresh: float = 0.05
    proposal_nms_thresh: float = 0.4
    box_nms_thresh: float = 0.5
    detections_per_frame: int = 300

    teacher_input_size: Tuple[int, int] = (256, 256)
    pretrained_weights: Optional[str] = None

    @model_validator(mode="after")
    def _channels_match_architecture(self):
        stages = _STAGE_CHANNELS.get(self.architecture_id)
        if stages is None:
            raise ValueError(f"unsupported architecture {self.architecture_id}; choose from {sorted(_STAGE_CHANNELS)}")
        if not 1 <= self.stem_depth <= 3:
            raise ValueError("stem_depth must leave at least one residual stage for the branch heads")
        if self.stem_output_channels != stages[self.stem_depth - 1]:
            raise ValueError(
                f"{self.architecture_id} stage {self.stem_depth} outputs {stages[self.stem_depth - 1]} "
                f"channels, config says {self.stem_output_channels}"
            )
        if self.branch_output_channels != stages[self.stem_depth]:
            raise ValueError(
                f"{self.architecture_id} branch stage outputs {stages[self.stem_depth]} channels, "
                f"config says {self.branch_output_channels}"
            )
        return self

    @property
    def feature_stride(self) -> int:
        # conv1 + maxpool give 4, every stage after the first halves again
        return 4 * 2 ** (self.stem_depth - 1)

    @property
    def branch_height(self) -> int:
        return (self.pooled_height + 1) // 2

    @property
    def branch_width(self) -> int:
        return (self.pooled_width + 1) // 2

    @classmethod
    def reference(cls, **overrides) -> "BackboneConfig":
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides) -> "BackboneConfig":
        values = dict(
            architecture_id="resnet18",
            stem_depth=2,
            stem_output_channels=128,
            branch_output_channels=256,
            pooled_height=7,
            pooled_width=7,
            image_size=(64, 64),
            anchor_sizes=(8, 16, 32),
            rpn_pre_nms_train=600,
            rpn_pre_nms_eval=300,
            proposals_train=64,
            proposals_eval=32,
            rpn_batch_size=64,
            roi_batch_size=64,
            detections_per_frame=32,
            teacher_input_size=(32, 32),
        )
        values.update(overrides)
        return cls(**values)
