"""
Detection loss shared by the detection branch and the refined identity-branch boxes.

Labels follow the proposal sampler: 1 foreground, 0 background, -1 ignored.
Classification is binary cross-entropy on objectness logits averaged over
the labeled proposals; box regression is smooth-L1 on foreground proposals
normalized by the same count.
"""

import logging

import torch
import torch.nn.functional as F
from torch import Tensor

from datamodel.errors import ContractError
from losses.warnings import LOSS_WARNINGS

logger = logging.getLogger(__name__)

SMOOTH_L1_BETA = 1.0 / 9.0


def detection_loss(
    objectness_logits: Tensor,
    box_deltas: Tensor,
    labels: Tensor,
    regression_targets: Tensor,
    beta: float = SMOOTH_L1_BETA,
) -> Tensor:
    """Binary classification + foreground smooth-L1 regression.

    Args:
        objectness_logits: [n] pre-sigmoid scores.
        box_deltas: [n, 4] predicted box deltas.
        labels: [n] with 1 foreground, 0 background, -1 ignored.
        regression_targets: [n, 4] encoded deltas towards the matched ground truth.
    """
    n = objectness_logits.shape[0]
    if box_deltas.shape != (n, 4) or regression_targets.shape != (n, 4) or labels.shape != (n,):
        raise ContractError(
            f"detection_loss shapes disagree: logits {tuple(objectness_logits.shape)}, "
            f"deltas {tuple(box_deltas.shape)}, labels {tuple(labels.shape)}, "
            f"targets {tuple(regression_targets.shape)}"
        )

    labeled = labels >= 0
    num_labeled = int(labeled.sum())
    if num_labeled == 0:
        LOSS_WARNINGS["detection_no_labeled_proposals"] += 1
        logger.warning("detection_loss called without labeled proposals, returning 0")
        return objectness_logits.sum() * 0.0 + box_deltas.sum() * 0.0

    cls_loss = F.binary_cross_entropy_with_logits(
        objectness_logits[labeled], labels[labeled].to(objectness_logits.dtype), reduction="sum"
    ) / num_labeled

    foreground = labels == 1
    reg_loss = F.smooth_l1_loss(
        box_deltas[foreground], regression_targets[foreground], beta=beta, reduction="sum"
    ) / num_labeled

    return cls_loss + reg_loss
