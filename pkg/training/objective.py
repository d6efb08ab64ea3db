"""Loss components of one stage-2 step, computed from a training forward pass."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import torch
from torch import Tensor

from datamodel.records import UNLABELED
from losses.alignment import sra_id_loss, sra_obj_loss
from losses.bundle import LossToggles
from losses.detection import detection_loss
from losses.identification import mil_box_loss, mil_fea_loss, mil_img_loss, multi_id_targets
from losses.oim import IdentityLookupTable, oim_loss
from models.contracts import TeacherEmbedder
from models.crops import crop_regions
from models.search_net import FrameTargets, TrainingForward
from training.config import OimTarget


@dataclass
class ObjectiveContext:
    """Frozen inputs shared by every step."""

    t_fore: Tensor
    t_back: Tensor
    identity_text: Tensor  # [C, text_dim]
    lookup_table: IdentityLookupTable
    toggles: LossToggles
    oim_on: OimTarget = OimTarget.BOTH
    teacher: Optional[TeacherEmbedder] = None
    teacher_input_size: Tuple[int, int] = (256, 256)


def _reid_inputs(out: TrainingForward, oim_on: OimTarget) -> Tuple[Tensor, Tensor]:
    parts: List[Tuple[Tensor, Tensor]] = []
    if oim_on in (OimTarget.PREDICTED, OimTarget.BOTH):
        # -1 marks predicted boxes matched to background
        fg = out.box_identities >= UNLABELED
        parts.append((out.box_embeddings[fg], out.box_identities[fg]))
    if oim_on in (OimTarget.GROUND_TRUTH, OimTarget.BOTH):
        parts.append((out.gt_embeddings, out.gt_identities))
    return torch.cat([p[0] for p in parts]), torch.cat([p[1] for p in parts])


def compute_components(
    out: TrainingForward,
    images: Tensor,
    targets: List[FrameTargets],
    ctx: ObjectiveContext,
) -> Dict[str, Tensor]:
    """All enabled components; disabled ones are left out and count as zero."""
    det = sum(out.rpn_losses.values(), out.proposal_logits.new_zeros(()))
    det = det + detection_loss(out.proposal_logits, out.proposal_deltas, out.proposal_labels, out.proposal_reg_targets)
    det = det + detection_loss(out.box_norm_logits, out.box_deltas, out.box_labels, out.box_reg_targets)

    embeddings, identities = _reid_inputs(out, ctx.oim_on)
    reid, _ = oim_loss(embeddings, identities, ctx.lookup_table)
    components = {"det": det, "reid": reid}

    toggles = ctx.toggles
    if toggles.sra_obj:
        sampled = out.proposal_labels >= 0
        components["sra_obj"] = sra_obj_loss(
            out.proposal_text[sampled], out.proposal_labels[sampled], ctx.t_fore.to(images), ctx.t_back.to(images)
        )
    if toggles.sra_id:
        components["sra_id"] = sra_id_loss(out.gt_text, out.gt_identities, ctx.identity_text.to(images))
    if toggles.mil_img:
        presence = multi_id_targets([t.identities.tolist() for t in targets], out.image_probs.shape[1])
        components["mil_img"] = mil_img_loss(out.image_probs, presence.to(images))
    if toggles.mil_box:
        components["mil_box"] = mil_box_loss(out.gt_box_probs, out.gt_identities)
    if toggles.mil_fea:
        if ctx.teacher is None:
            raise ValueError("feature-level identification needs a pre-trained teacher")
        crops = crop_regions(images, [t.boxes.to(images) for t in targets], ctx.teacher_input_size)
        components["mil_fea"] = mil_fea_loss(out.gt_embeddings, ctx.teacher.embed(crops).to(images))
    return components
