"""
Semantic-region alignment between pooled region vectors and text embeddings.

Object granularity contrasts every sampled region against the two fixed
prompts ("A photo of a vehicle" / "Not a photo of a vehicle"). Identity
granularity classifies ground-truth regions over the per-identity prompt
embeddings. Similarities are cosine throughout.
"""

import logging

import torch
import torch.nn.functional as F
from torch import Tensor

from datamodel.errors import ContractError
from datamodel.records import UNLABELED
from losses.warnings import LOSS_WARNINGS

logger = logging.getLogger(__name__)

ID_LOGIT_SCALE = 100.0


def _cosine(vectors: Tensor, texts: Tensor) -> Tensor:
    """[n, k] x [m, k] -> [n, m] cosine similarities."""
    return F.normalize(vectors, dim=-1) @ F.normalize(texts, dim=-1).t()


def sra_obj_loss(
    vectors: Tensor,
    labels: Tensor,
    t_fore: Tensor,
    t_back: Tensor,
    normalize: bool = False,
) -> Tensor:
    """Foreground/background alignment, summed over regions.

    With s1 = cos(f, t_fore) and s2 = cos(f, t_back), each region contributes
    -log(exp(s_c) / (exp(s1) + exp(s2))) where s_c is s1 for foreground
    (label 1) and s2 for background (label 0).
    """
    if vectors.dim() != 2 or labels.shape != (vectors.shape[0],):
        raise ContractError(f"sra_obj_loss expects [n, k] vectors and [n] labels, got "
                            f"{tuple(vectors.shape)} and {tuple(labels.shape)}")
    if t_fore.shape != (vectors.shape[1],) or t_back.shape != (vectors.shape[1],):
        raise ContractError("object prompt embeddings must match the region vector dimension")
    n = vectors.shape[0]
    if n == 0:
        return vectors.sum() * 0.0

    sims = _cosine(vectors, torch.stack([t_fore, t_back]).to(vectors.dtype))
    fg = labels.to(vectors.dtype)
    selected = fg * sims[:, 0] + (1.0 - fg) * sims[:, 1]
    loss = (torch.logsumexp(sims, dim=1) - selected).sum()
    return loss / n if normalize else loss


def sra_id_loss(
    vectors: Tensor,
    identities: Tensor,
    text_embeddings: Tensor,
    logit_scale: float = ID_LOGIT_SCALE,
    normalize: bool = False,
) -> Tensor:
    """Identity alignment: cross-entropy over C scaled cosine logits, summed.

    Rows labeled UNLABELED have no prompt to align with and are skipped.
    """
    if vectors.dim() != 2 or identities.shape != (vectors.shape[0],):
        raise ContractError(f"sra_id_loss expects [m, k] vectors and [m] identities, got "
                            f"{tuple(vectors.shape)} and {tuple(identities.shape)}")
    if text_embeddings.dim() != 2 or text_embeddings.shape[1] != vectors.shape[1]:
        raise ContractError(
            f"text embeddings {tuple(text_embeddings.shape)} do not match vectors {tuple(vectors.shape)}"
        )
    num_classes = text_embeddings.shape[0]
    if identities.numel() and int(identities.max()) > num_classes:
        raise ContractError(
            f"identity {int(identities.max())} has no learned prompt (bank holds {num_classes})"
        )

    labeled = identities != UNLABELED
    skipped = int((~labeled).sum())
    if skipped:
        LOSS_WARNINGS["sra_id_unlabeled_skipped"] += skipped
    if not bool(labeled.any()):
        return vectors.sum() * 0.0

    logits = logit_scale * _cosine(vectors[labeled], text_embeddings.to(vectors.dtype))
    loss = F.cross_entropy(logits, identities[labeled] - 1, reduction="sum")
    return loss / int(labeled.sum()) if normalize else loss
