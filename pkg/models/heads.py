"""
Per-region heads of the search network.

NormAwareEmbedding splits a region feature into a unit-norm identity
direction and a norm-derived objectness score. The remaining heads map
pooled features to box deltas, text-space vectors and identity classes.
"""

from typing import List, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn
from torch.nn import init

from models.backbone import global_pool


class SafeBatchNorm1d(nn.BatchNorm1d):
    """
    BatchNorm1d that falls back to running statistics for a batch of one
    instead of raising.
    """

    def forward(self, input: Tensor) -> Tensor:
        self._check_input_dim(input)

        exponential_average_factor = 0.0 if self.momentum is None else self.momentum
        if self.training and self.track_running_stats and self.num_batches_tracked is not None:
            self.num_batches_tracked.add_(1)
            if self.momentum is None:
                exponential_average_factor = 1.0 / float(self.num_batches_tracked)

        if self.training and input.size(0) > 1:
            bn_training = True
        else:
            bn_training = (self.running_mean is None) and (self.running_var is None)

        return F.batch_norm(
            input,
            self.running_mean if (not self.training or self.track_running_stats or input.size(0) == 1) else None,
            self.running_var if (not self.training or self.track_running_stats or input.size(0) == 1) else None,
            self.weight,
            self.bias,
            bn_training,
            exponential_average_factor,
            self.eps,
        )


def _linear_bn(in_channels: int, out_channels: int) -> nn.Sequential:
    proj = nn.Sequential(nn.Linear(in_channels, out_channels), SafeBatchNorm1d(out_channels))
    init.normal_(proj[0].weight, std=0.01)
    init.normal_(proj[1].weight, std=0.01)
    init.constant_(proj[0].bias, 0)
    init.constant_(proj[1].bias, 0)
    return proj


class NormAwareEmbedding(nn.Module):
    """Projects the stem-level and branch-level region vectors into one o-dim embedding.

    Returns the L2-normalized embedding and the rescaled norm, used as an
    objectness logit.
    """

    def __init__(self, in_channels: List[int], dim: int = 256):
        super().__init__()
        self.dim = dim
        self.projectors = nn.ModuleList(
            _linear_bn(c, d) for c, d in zip(in_channels, self._split_embedding_dim(len(in_channels)))
        )
        self.rescaler = SafeBatchNorm1d(1)

    def forward(self, vectors: List[Tensor]) -> Tuple[Tensor, Tensor]:
        embeddings = torch.cat([proj(v) for proj, v in zip(self.projectors, vectors)], dim=1)
        norms = embeddings.norm(2, 1, keepdim=True)
        embeddings = embeddings / norms.clamp(min=1e-12)
        norm_logits = self.rescaler(norms).squeeze(1)
        return embeddings, norm_logits

    def _split_embedding_dim(self, parts: int) -> List[int]:
        sizes = [self.dim // parts] * parts
        for i in range(1, self.dim - sum(sizes) + 1):
            sizes[-i] += 1
        return sizes


class BoxRegressor(nn.Module):
    """Class-agnostic box deltas from a branch feature map."""

    def __init__(self, in_channels: int, bn_neck: bool = True):
        super().__init__()
        if bn_neck:
            self.bbox_pred = _linear_bn(in_channels, 4)
        else:
            self.bbox_pred = nn.Linear(in_channels, 4)
            init.normal_(self.bbox_pred.weight, std=0.01)
            init.constant_(self.bbox_pred.bias, 0)

    def forward(self, x: Tensor) -> Tensor:
        return self.bbox_pred(global_pool(x) if x.dim() == 4 else x)


class DetectionPredictor(nn.Module):
    """Objectness logit and box deltas for the detection branch."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.cls_score = nn.Linear(in_channels, 1)
        self.bbox_pred = nn.Linear(in_channels, 4)
        init.normal_(self.cls_score.weight, std=0.01)
        init.normal_(self.bbox_pred.weight, std=0.001)
        init.constant_(self.cls_score.bias, 0)
        init.constant_(self.bbox_pred.bias, 0)

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        v = global_pool(x)
        return self.cls_score(v).squeeze(1), self.bbox_pred(v)


class TextProjection(nn.Module):
    """Average-pool a region map and project it into the text-embedding space."""

    def __init__(self, in_channels: int, text_dim: int):
        super().__init__()
        self.proj = nn.Linear(in_channels, text_dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(global_pool(x))


class IdentityClassifier(nn.Module):
    """Pool + linear map to C identity logits.

    Used twice: multi-label over the whole frame map (sigmoid) and
    single-label over ground-truth region maps (softmax).
    """

    def __init__(self, in_channels: int, num_identities: int):
        super().__init__()
        self.fc = nn.Linear(in_channels, num_identities)
        init.normal_(self.fc.weight, std=0.001)
        init.constant_(self.fc.bias, 0)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc(global_pool(x))


def region_vectors(pooled: Tensor, branch: Tensor) -> List[Tensor]:
    """Max-pooled stem-level and branch-level vectors fed to the embedding."""
    return [
        torch.flatten(F.adaptive_max_pool2d(pooled, 1), 1),
        torch.flatten(F.adaptive_max_pool2d(branch, 1), 1),
    ]

