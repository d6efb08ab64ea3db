"""
Multi-level identification losses.

Image level: multi-label identity presence per frame (binary cross-entropy,
mean over classes, summed over frames). Box level: single-label identity
classification of ground-truth boxes (negative log-likelihood, summed).
Feature level: L1 distance between student embeddings and a frozen teacher.
"""

import logging

import torch
import torch.nn.functional as F
from torch import Tensor

from datamodel.errors import ContractError
from datamodel.records import UNLABELED
from losses.warnings import LOSS_WARNINGS

logger = logging.getLogger(__name__)

# torch's BCE clamps log terms at -100; the box loss does the same
LOG_FLOOR = -100.0


def multi_id_targets(identities_per_frame, num_identities: int, dtype=torch.float32) -> Tensor:
    """Frame-level presence vectors built by dropping the box locations.

    `identities_per_frame` holds one sequence of identity labels per frame;
    UNLABELED entries are ignored.
    """
    targets = torch.zeros(len(identities_per_frame), num_identities, dtype=dtype)
    for row, identities in enumerate(identities_per_frame):
        for identity in identities:
            identity = int(identity)
            if identity == UNLABELED:
                continue
            if identity > num_identities:
                raise ContractError(f"identity {identity} exceeds C={num_identities}")
            targets[row, identity - 1] = 1.0
    return targets


def mil_img_loss(probs: Tensor, targets: Tensor, normalize: bool = False) -> Tensor:
    """Args:
        probs: [T, C] sigmoid outputs of the multi-label classifier.
        targets: [T, C] presence vectors in {0, 1}.
    """
    if probs.shape != targets.shape or probs.dim() != 2:
        raise ContractError(f"mil_img_loss shapes disagree: {tuple(probs.shape)} vs {tuple(targets.shape)}")
    if probs.shape[0] == 0:
        return probs.sum() * 0.0
    per_frame = F.binary_cross_entropy(probs, targets.to(probs.dtype), reduction="none").mean(dim=1)
    loss = per_frame.sum()
    return loss / probs.shape[0] if normalize else loss


def mil_box_loss(probs: Tensor, identities: Tensor, normalize: bool = False) -> Tensor:
    """Args:
        probs: [m, C] softmax outputs of the single-label classifier.
        identities: [m] ground-truth labels; UNLABELED boxes are skipped and counted.
    """
    if probs.dim() != 2 or identities.shape != (probs.shape[0],):
        raise ContractError(f"mil_box_loss expects [m, C] and [m], got "
                            f"{tuple(probs.shape)} and {tuple(identities.shape)}")
    if identities.numel() and int(identities.max()) > probs.shape[1]:
        raise ContractError(f"identity {int(identities.max())} exceeds C={probs.shape[1]}")

    labeled = identities != UNLABELED
    skipped = int((~labeled).sum())
    if skipped:
        LOSS_WARNINGS["mil_box_unlabeled_skipped"] += skipped
        logger.warning(f"mil_box_loss skipped {skipped} unlabeled ground-truth boxes")
    if not bool(labeled.any()):
        return probs.sum() * 0.0

    picked = probs[labeled].gather(1, (identities[labeled] - 1).unsqueeze(1)).squeeze(1)
    loss = -(torch.log(picked).clamp(min=LOG_FLOOR)).sum()
    return loss / int(labeled.sum()) if normalize else loss


def mil_fea_loss(student: Tensor, teacher: Tensor, normalize: bool = False) -> Tensor:
    """Sum of per-box L1 distances; the teacher side never receives gradient."""
    if student.shape != teacher.shape or student.dim() != 2:
        raise ContractError(f"mil_fea_loss shapes disagree: {tuple(student.shape)} vs {tuple(teacher.shape)}")
    if student.shape[0] == 0:
        return student.sum() * 0.0
    loss = (teacher.detach().to(student.dtype) - student).abs().sum()
    return loss / student.shape[0] if normalize else loss
