"""
Crop-level re-ID model used as the frozen feature-level teacher.

ResNet trunk -> global average pool -> linear projection to o -> BN neck ->
identity classifier. `embed` returns the L2-normalized neck output.
"""

import logging
from typing import List

import torch
import torch.nn.functional as F
import torchvision
from torch import Tensor, nn
from torch.nn import init

from datamodel.errors import ContractError

logger = logging.getLogger(__name__)

_TRUNK_CHANNELS = {"resnet18": 512, "resnet34": 512, "resnet50": 2048, "resnet101": 2048}


class ReIDTeacher(nn.Module):
    def __init__(
        self,
        num_identities: int,
        embedding_dim: int = 256,
        architecture_id: str = "resnet50",
        input_size=(256, 256),
    ):
        super().__init__()
        if architecture_id not in _TRUNK_CHANNELS:
            raise ContractError(f"unsupported teacher architecture {architecture_id}")
        resnet = torchvision.models.__dict__[architecture_id](weights=None)
        self.trunk = nn.Sequential(*list(resnet.children())[:-2])
        self.projection = nn.Linear(_TRUNK_CHANNELS[architecture_id], embedding_dim)
        self.neck = nn.BatchNorm1d(embedding_dim)
        self.neck.bias.requires_grad_(False)
        self.classifier = nn.Linear(embedding_dim, num_identities, bias=False)
        init.normal_(self.classifier.weight, std=0.001)

        self.embedding_dim = embedding_dim
        self.input_size = tuple(input_size)
        self.architecture_id = architecture_id
        self.register_buffer("pixel_mean", torch.tensor([0.485, 0.456, 0.406]).view(-1, 1, 1))
        self.register_buffer("pixel_std", torch.tensor([0.229, 0.224, 0.225]).view(-1, 1, 1))

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def features(self, crops: Tensor) -> Tensor:
        """[m, 3, H, W] crops in [0, 1] -> pre-neck features [m, o]."""
        if crops.dim() != 4 or crops.shape[1] != 3:
            raise ContractError(f"expected [m, 3, H, W] crops, got {tuple(crops.shape)}")
        if tuple(crops.shape[-2:]) != self.input_size:
            crops = F.interpolate(crops, size=self.input_size, mode="bilinear", align_corners=False)
        x = self.trunk((crops - self.pixel_mean) / self.pixel_std)
        return self.projection(torch.flatten(F.adaptive_avg_pool2d(x, 1), 1))

    def forward(self, crops: Tensor):
        """Returns (pre-neck features, identity logits) for the training losses."""
        feats = self.features(crops)
        return feats, self.classifier(self.neck(feats))

    @torch.no_grad()
    def embed(self, crops: Tensor) -> Tensor:
        if crops.shape[0] == 0:
            return crops.new_zeros((0, self.embedding_dim))
        was_training = self.training
        self.eval()
        out = F.normalize(self.neck(self.features(crops)), dim=1)
        self.train(was_training)
        return out

    def freeze(self) -> "ReIDTeacher":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    def trainable_parameters(self) -> List[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]
