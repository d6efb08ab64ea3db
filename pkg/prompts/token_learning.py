"""
Stage-1: learn the identity prompt tokens against frozen encoders.

Image and text towers stay frozen; only the bank's token parameters are
optimized with a symmetric image<->text contrastive loss.
"""

import logging
import random
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from torch import Tensor

from datamodel.records import DatasetManifest
from models.contracts import ImageEncoder, TextEncoder
from models.crops import collect_identity_crops
from prompts.bank import IdentityPromptBank, encode_bank
from prompts.templates import NUM_CONTEXT_TOKENS, PromptVariant

logger = logging.getLogger(__name__)


class PromptConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: PromptVariant = PromptVariant.ATTRIBUTE
    num_context: int = Field(NUM_CONTEXT_TOKENS, ge=1)
    epochs: int = Field(60, ge=0)
    lr: float = Field(3.5e-4, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    ids_per_batch: int = Field(16, ge=1)
    seed: int = 0
    attribute_words: Optional[Dict[int, Tuple[str, str]]] = None


def contrastive_loss(image_features: Tensor, labels: Tensor, text_features: Tensor, logit_scale: float) -> Tensor:
    """
    Symmetric contrastive loss.

    image_features: [B, k]; labels: [B] row index into text_features;
    text_features: [U, k]. Image->text is plain cross-entropy; text->image
    averages the log-likelihood over every crop of the identity.
    """
    img = F.normalize(image_features, dim=-1)
    txt = F.normalize(text_features, dim=-1)
    logits = logit_scale * img @ txt.t()
    i2t = F.cross_entropy(logits, labels)

    positives = (labels.unsqueeze(0) == torch.arange(txt.shape[0], device=labels.device).unsqueeze(1)).to(logits.dtype)
    log_probs = F.log_softmax(logits.t(), dim=-1)
    t2i = -((log_probs * positives).sum(-1) / positives.sum(-1).clamp(min=1)).mean()
    return i2t + t2i


@torch.no_grad()
def _embed_crops(image_encoder: ImageEncoder, crops: Dict[int, Tensor]) -> Dict[int, Tensor]:
    return {identity: image_encoder.encode_image(batch).float() for identity, batch in crops.items()}


def _batch(features: Dict[int, Tensor], identities: List[int]) -> Tuple[Tensor, Tensor]:
    feats = torch.cat([features[c] for c in identities])
    labels = torch.cat([torch.full((len(features[c]),), i, dtype=torch.long) for i, c in enumerate(identities)])
    return feats, labels


def full_objective(
    bank: IdentityPromptBank,
    features: Dict[int, Tensor],
    text_encoder: TextEncoder,
) -> float:
    """Contrastive loss over every identity with crops, without gradients."""
    identities = sorted(features)
    if not identities:
        return 0.0
    with torch.no_grad():
        feats, labels = _batch(features, identities)
        text = bank(text_encoder, torch.tensor(identities))
        return float(contrastive_loss(feats, labels, text, text_encoder.logit_scale))


def learn_tokens(
    bank: IdentityPromptBank,
    crops: Dict[int, Tensor],
    image_encoder: ImageEncoder,
    text_encoder: TextEncoder,
    config: PromptConfig,
    history: Optional[List[dict]] = None,
) -> IdentityPromptBank:
    """Optimize the bank's tokens in place; `history` receives per-epoch losses (epoch 0 = init)."""
    stats = defaultdict(int)
    for identity in range(1, bank.num_identities + 1):
        if identity not in crops or len(crops[identity]) == 0:
            logger.warning(f"identity {identity} has no crops, keeping its tokens at initialization")
            stats["identities_without_crops"] += 1
    features = _embed_crops(image_encoder, {c: v for c, v in crops.items() if len(v)})
    if history is not None:
        history.append({"epoch": 0, "loss": full_objective(bank, features, text_encoder)})

    params = [p for p in bank.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    rng = random.Random(config.seed)
    identities = sorted(features)

    for epoch in range(1, config.epochs + 1):
        order = identities[:]
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.ids_per_batch):
            chosen = order[start : start + config.ids_per_batch]
            feats, labels = _batch(features, chosen)
            text = bank(text_encoder, torch.tensor(chosen))
            loss = contrastive_loss(feats, labels, text, text_encoder.logit_scale)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss) * len(chosen)
            stats["steps"] += 1
        if history is not None:
            history.append({"epoch": epoch, "loss": full_objective(bank, features, text_encoder)})
        if epoch == 1 or epoch % 10 == 0 or epoch == config.epochs:
            logger.info(f"token epoch {epoch}/{config.epochs}: loss={epoch_loss / max(len(order), 1):.4f}")

    logger.info(f"token learning done: {dict(stats)}")
    return bank


def pretrain_id_tokens(
    train_manifest: DatasetManifest,
    image_root: Union[str, Path],
    image_encoder: ImageEncoder,
    text_encoder: TextEncoder,
    epochs: Optional[int] = None,
    config: Optional[PromptConfig] = None,
    history: Optional[List[dict]] = None,
) -> IdentityPromptBank:
    """Build a bank for the training identities, learn its tokens, encode and freeze it."""
    config = config or PromptConfig()
    if epochs is not None:
        config = config.model_copy(update={"epochs": epochs})
    crops, _ = collect_identity_crops(train_manifest, image_root, image_encoder.input_size)
    bank = IdentityPromptBank(
        train_manifest.num_identities,
        text_encoder,
        num_context=config.num_context,
        variant=config.variant,
        attribute_words=config.attribute_words,
        seed=config.seed,
    )
    learn_tokens(bank, crops, image_encoder, text_encoder, config, history)
    encode_bank(bank, text_encoder)
    return bank.freeze()
