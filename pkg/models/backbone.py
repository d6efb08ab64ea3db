"""ResNet split into a shared stem and a (copied) branch stage."""

import logging
from collections import OrderedDict
from typing import Tuple

import torch
import torchvision
from torch import Tensor, nn

from models.config import BackboneConfig

logger = logging.getLogger(__name__)


class Backbone(nn.Sequential):
    """conv1 .. layer{stem_depth}; returns the shared feature map F_t."""

    def __init__(self, resnet: nn.Module, stem_depth: int, out_channels: int):
        layers = [
            ("conv1", resnet.conv1),
            ("bn1", resnet.bn1),
            ("relu", resnet.relu),
            ("maxpool", resnet.maxpool),
        ]
        layers += [(f"layer{i}", getattr(resnet, f"layer{i}")) for i in range(1, stem_depth + 1)]
        super().__init__(OrderedDict(layers))
        self.out_channels = out_channels


class BranchHead(nn.Sequential):
    """The residual stage after the stem: [n, d, h, w] -> [n, 2d, ceil(h/2), ceil(w/2)]."""

    def __init__(self, stage: nn.Module, out_channels: int):
        super().__init__(OrderedDict([("stage", stage)]))
        self.out_channels = out_channels


def build_resnet(config: BackboneConfig) -> Tuple[Backbone, BranchHead]:
    resnet = torchvision.models.__dict__[config.architecture_id](weights=None)
    if config.pretrained_weights:
        state = torch.load(config.pretrained_weights, map_location="cpu")
        missing, unexpected = resnet.load_state_dict(state, strict=False)
        logger.info(
            f"Loaded backbone weights from {config.pretrained_weights} "
            f"({len(missing)} missing, {len(unexpected)} unexpected keys)"
        )

    # first conv layer stays at its initialization
    resnet.conv1.weight.requires_grad_(False)
    resnet.bn1.weight.requires_grad_(False)
    resnet.bn1.bias.requires_grad_(False)

    stem = Backbone(resnet, config.stem_depth, config.stem_output_channels)
    head = BranchHead(getattr(resnet, f"layer{config.stem_depth + 1}"), config.branch_output_channels)
    return stem, head


def global_pool(x: Tensor) -> Tensor:
    """[n, c, h, w] -> [n, c]."""
    return torch.flatten(nn.functional.adaptive_avg_pool2d(x, 1), 1)
