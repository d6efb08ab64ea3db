"""Region batches and per-region outputs passed between the network heads."""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import torch
from torch import Tensor

from datamodel.errors import ContractError
from datamodel.records import FrameRecord


class RegionSource(str, Enum):
    PROPOSAL = "proposal"
    PREDICTED = "predicted"
    GROUND_TRUTH = "ground_truth"


@dataclass
class RegionBatch:
    """Boxes of one or more frames with their pooled feature maps.

    Tensors are channels-first: pooled is [n, d, h, w], branch is
    [n, 2d, h/2, w/2] once a branch head has run. `frame_indices` maps
    each row to its frame in the batch.
    """

    boxes: Tensor
    source: RegionSource
    pooled: Tensor
    frame_indices: Tensor
    image_size: Optional[Tuple[int, int]] = None
    identities: Optional[Tensor] = None
    branch: Optional[Tensor] = None
    frame_ref: Optional[FrameRecord] = None

    def __post_init__(self):
        n = self.boxes.shape[0]
        if self.boxes.dim() != 2 or self.boxes.shape[1] != 4:
            raise ContractError(f"boxes must be [n, 4], got {tuple(self.boxes.shape)}")
        if self.pooled.dim() != 4 or self.pooled.shape[0] != n:
            raise ContractError(f"pooled features {tuple(self.pooled.shape)} do not match {n} boxes")
        if self.frame_indices.shape != (n,):
            raise ContractError("one frame index per box is required")
        if self.source == RegionSource.GROUND_TRUTH and self.identities is None:
            raise ContractError("ground-truth regions must carry identity labels")
        if self.identities is not None and self.identities.shape != (n,):
            raise ContractError("one identity label per box is required")

    def __len__(self) -> int:
        return self.boxes.shape[0]


@dataclass(frozen=True)
class DetectionOutput:
    refined_box: Tuple[float, float, float, float]
    objectness: float


@dataclass(frozen=True)
class IdentityEmbedding:
    vector: Tensor
    norm_score: float


@dataclass
class DetectionResult:
    logits: Tensor
    deltas: Tensor
    refined_boxes: Tensor

    @property
    def scores(self) -> Tensor:
        return torch.sigmoid(self.logits)

    def outputs(self) -> List[DetectionOutput]:
        scores = self.scores.detach().tolist()
        boxes = self.refined_boxes.detach().tolist()
        return [DetectionOutput(tuple(b), s) for b, s in zip(boxes, scores)]


@dataclass
class IdentityResult:
    deltas: Tensor
    refined_boxes: Tensor
    embeddings: Tensor
    norm_logits: Tensor

    @property
    def norm_scores(self) -> Tensor:
        return torch.sigmoid(self.norm_logits)

    def outputs(self) -> List[IdentityEmbedding]:
        scores = self.norm_scores.detach().tolist()
        return [IdentityEmbedding(v, s) for v, s in zip(self.embeddings.detach(), scores)]


@dataclass
class FrameDetections:
    """Gallery-side output for one frame: refined boxes, scores and embeddings."""

    boxes: Tensor
    scores: Tensor
    embeddings: Tensor
    norm_scores: Tensor = field(default_factory=lambda: torch.zeros(0))

    def __len__(self) -> int:
        return self.boxes.shape[0]
