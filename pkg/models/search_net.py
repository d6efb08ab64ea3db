"""
Joint vehicle detection and re-identification network.

    frame -> stem (F_t) -> RPN proposals -> RoI Align [n, d, h, w]
          -> detection branch: det stage [n, 2d, h/2, w/2] -> objectness + box deltas
          -> identity branch:  id stage  [n, 2d, h/2, w/2] -> refined boxes + norm-aware embedding

The two branch stages start as copies of the same residual stage but never
share parameters. Text projections and identity classifiers hang off the
branch maps for the alignment and multi-level identification losses.
"""

import copy
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn
from torchvision.models.detection._utils import BalancedPositiveNegativeSampler, BoxCoder, Matcher
from torchvision.models.detection.image_list import ImageList
from torchvision.models.detection.rpn import AnchorGenerator, RegionProposalNetwork, RPNHead
from torchvision.ops import boxes as box_ops
from torchvision.ops import roi_align

from datamodel.errors import ContractError
from datamodel.records import UNLABELED, FrameRecord
from models.backbone import build_resnet
from models.config import BackboneConfig
from models.heads import (
    BoxRegressor,
    DetectionPredictor,
    IdentityClassifier,
    NormAwareEmbedding,
    TextProjection,
    region_vectors,
)
from models.regions import (
    DetectionResult,
    FrameDetections,
    IdentityEmbedding,
    IdentityResult,
    RegionBatch,
    RegionSource,
)

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
BOX_CODER_WEIGHTS = (10.0, 10.0, 5.0, 5.0)
MIN_BOX_SIDE = 1e-2


class InputError(ValueError):
    """Raised when an image is smaller than the backbone's feature stride."""
    pass


@dataclass
class FrameTargets:
    """Ground truth of one training frame, in the resized image's pixel space."""

    boxes: Tensor
    identities: Tensor


@dataclass
class TrainingForward:
    """Everything the objective needs from one training forward pass."""

    rpn_losses: Dict[str, Tensor]
    # detection branch over sampled proposals
    proposal_logits: Tensor
    proposal_deltas: Tensor
    proposal_labels: Tensor
    proposal_reg_targets: Tensor
    proposal_text: Tensor
    # identity branch over boxes predicted by the detection branch
    box_deltas: Tensor
    box_norm_logits: Tensor
    box_labels: Tensor
    box_reg_targets: Tensor
    box_embeddings: Tensor
    box_identities: Tensor
    # identity branch over ground-truth boxes
    gt_embeddings: Tensor
    gt_identities: Tensor
    gt_frame_indices: Tensor
    gt_text: Tensor
    gt_box_probs: Tensor
    # frame level
    image_probs: Tensor


class VehicleSearchNet(nn.Module):
    def __init__(self, config: BackboneConfig, num_identities: int, text_dim: int):
        super().__init__()
        if num_identities < 1:
            raise ContractError("the search network needs at least one training identity")
        self.config = config
        self.num_identities = num_identities
        self.text_dim = text_dim

        d, d2, o = config.stem_output_channels, config.branch_output_channels, config.embedding_dim
        self.backbone, det_head = build_resnet(config)
        self.det_head = det_head
        self.id_head = copy.deepcopy(det_head)

        anchor_generator = AnchorGenerator(
            sizes=(tuple(config.anchor_sizes),), aspect_ratios=(tuple(config.aspect_ratios),)
        )
        self.rpn = RegionProposalNetwork(
            anchor_generator=anchor_generator,
            head=RPNHead(d, anchor_generator.num_anchors_per_location()[0]),
            fg_iou_thresh=0.7,
            bg_iou_thresh=0.3,
            batch_size_per_image=config.rpn_batch_size,
            positive_fraction=config.rpn_positive_fraction,
            pre_nms_top_n=dict(training=config.rpn_pre_nms_train, testing=config.rpn_pre_nms_eval),
            post_nms_top_n=dict(training=config.proposals_train, testing=config.proposals_eval),
            nms_thresh=config.rpn_nms_thresh,
        )

        self.box_coder = BoxCoder(BOX_CODER_WEIGHTS)
        self.proposal_matcher = Matcher(config.fg_iou_thresh, config.bg_iou_thresh, allow_low_quality_matches=False)
        self.fg_bg_sampler = BalancedPositiveNegativeSampler(config.roi_batch_size, config.roi_positive_fraction)

        self.det_predictor = DetectionPredictor(d2)
        self.id_regressor = BoxRegressor(d2)
        self.embedding_head = NormAwareEmbedding([d, d2], o)

        self.det_text_proj = TextProjection(d2, text_dim)
        self.id_text_proj = TextProjection(d2, text_dim)
        self.image_classifier = IdentityClassifier(d, num_identities)
        self.box_classifier = IdentityClassifier(d2, num_identities)

        self.register_buffer("pixel_mean", torch.tensor(IMAGENET_MEAN).view(-1, 1, 1))
        self.register_buffer("pixel_std", torch.tensor(IMAGENET_STD).view(-1, 1, 1))

    @property
    def device(self) -> torch.device:
        return self.pixel_mean.device

    @property
    def min_query_side(self) -> int:
        return self.config.feature_stride * 4

    # ------------------------------------------------------------------ stem

    def _as_batch(self, images: Tensor) -> Tensor:
        if images.dim() == 3:
            images = images.unsqueeze(0)
        if images.dim() != 4 or images.shape[1] != 3:
            raise ContractError(f"expected [T, 3, H, W] images, got {tuple(images.shape)}")
        return images.to(self.device)

    def extract_features(self, images: Tensor) -> Tensor:
        """[T, 3, H, W] images in [0, 1] -> F_t of shape [T, d, H/stride, W/stride]."""
        images = self._as_batch(images)
        stride = self.config.feature_stride
        height, width = images.shape[-2:]
        if height < stride or width < stride:
            raise InputError(f"image {height}x{width} is smaller than the feature stride {stride}")
        return self.backbone((images - self.pixel_mean) / self.pixel_std)

    def propose_regions(
        self,
        features: Tensor,
        image_sizes: Sequence[Tuple[int, int]],
        targets: Optional[List[FrameTargets]] = None,
    ) -> Tuple[List[Tensor], Dict[str, Tensor]]:
        """At most p clipped proposals per frame, highest objectness first."""
        budget = self.config.proposals_train if self.training else self.config.proposals_eval
        if budget == 0:
            empty = [features.new_zeros((0, 4)) for _ in range(features.shape[0])]
            return empty, {}
        # anchors derive their stride from the padded batch shape; no pixels are needed
        height = max(s[0] for s in image_sizes)
        width = max(s[1] for s in image_sizes)
        image_list = ImageList(features.new_empty((features.shape[0], 0, height, width)), [tuple(s) for s in image_sizes])
        rpn_targets = None
        if targets is not None:
            rpn_targets = [{"boxes": t.boxes.to(features.device)} for t in targets]
        proposals, losses = self.rpn(image_list, {"feat": features}, rpn_targets)
        return proposals, losses

    def pool_regions(
        self,
        features: Tensor,
        boxes: List[Tensor],
        source: RegionSource,
        identities: Optional[List[Tensor]] = None,
        image_size: Optional[Tuple[int, int]] = None,
        frame_ref: Optional[FrameRecord] = None,
    ) -> RegionBatch:
        """RoI Align every frame's boxes to h x w bins."""
        if len(boxes) != features.shape[0]:
            raise ContractError(f"{len(boxes)} box lists for {features.shape[0]} feature maps")
        boxes = [b.to(features.device, features.dtype).reshape(-1, 4) for b in boxes]
        all_boxes = torch.cat(boxes) if boxes else features.new_zeros((0, 4))
        frame_indices = torch.cat(
            [torch.full((len(b),), i, dtype=torch.long, device=features.device) for i, b in enumerate(boxes)]
        ) if boxes else torch.zeros(0, dtype=torch.long)
        h, w = self.config.pooled_height, self.config.pooled_width
        if all_boxes.shape[0] == 0:
            pooled = features.new_zeros((0, features.shape[1], h, w))
        else:
            pooled = roi_align(
                features,
                boxes,
                output_size=(h, w),
                spatial_scale=1.0 / self.config.feature_stride,
                sampling_ratio=2,
                aligned=True,
            )
        labels = torch.cat([i.to(features.device).long() for i in identities]) if identities is not None else None
        return RegionBatch(
            boxes=all_boxes,
            source=source,
            pooled=pooled,
            frame_indices=frame_indices,
            image_size=image_size,
            identities=labels,
            frame_ref=frame_ref,
        )

    # --------------------------------------------------------------- branches

    def _check_pooled(self, batch: RegionBatch) -> None:
        expected = (self.config.stem_output_channels, self.config.pooled_height, self.config.pooled_width)
        if tuple(batch.pooled.shape[1:]) != expected:
            raise ContractError(f"pooled features {tuple(batch.pooled.shape)} do not match [n, {expected}]")

    def _empty_branch(self, batch: RegionBatch) -> Tensor:
        return batch.pooled.new_zeros(
            (0, self.config.branch_output_channels, self.config.branch_height, self.config.branch_width)
        )

    def _decode(self, deltas: Tensor, boxes: Tensor, image_size: Optional[Tuple[int, int]]) -> Tensor:
        decoded = self.box_coder.decode(deltas, [boxes]).reshape(-1, 4)
        if image_size is not None:
            decoded = box_ops.clip_boxes_to_image(decoded, image_size)
        return decoded

    def detect(self, batch: RegionBatch) -> Tuple[Tensor, DetectionResult]:
        """Detection branch: f_det [n, 2d, h/2, w/2], objectness and refined boxes."""
        self._check_pooled(batch)
        if len(batch) == 0:
            empty = batch.pooled.new_zeros((0,))
            return self._empty_branch(batch), DetectionResult(empty, batch.boxes.new_zeros((0, 4)), batch.boxes)
        branch = self.det_head(batch.pooled)
        logits, deltas = self.det_predictor(branch)
        return branch, DetectionResult(logits, deltas, self._decode(deltas, batch.boxes, batch.image_size))

    def identify(self, batch: RegionBatch) -> Tuple[Tensor, IdentityResult]:
        """Identity branch: f_id, refined boxes and norm-aware embeddings."""
        self._check_pooled(batch)
        if len(batch) == 0:
            o = self.config.embedding_dim
            return self._empty_branch(batch), IdentityResult(
                deltas=batch.boxes.new_zeros((0, 4)),
                refined_boxes=batch.boxes,
                embeddings=batch.pooled.new_zeros((0, o)),
                norm_logits=batch.pooled.new_zeros((0,)),
            )
        branch = self.id_head(batch.pooled)
        deltas = self.id_regressor(branch)
        embeddings, norm_logits = self.embedding_head(region_vectors(batch.pooled, branch))
        return branch, IdentityResult(
            deltas=deltas,
            refined_boxes=self._decode(deltas, batch.boxes, batch.image_size),
            embeddings=embeddings,
            norm_logits=norm_logits,
        )

    def branch_parameters_shared(self) -> List[str]:
        """Names of parameters reachable from both the detection and identity branches."""
        det_modules = (self.det_head, self.det_predictor, self.det_text_proj)
        id_modules = (self.id_head, self.id_regressor, self.embedding_head, self.id_text_proj, self.box_classifier)
        det_ids = {id(p) for m in det_modules for p in m.parameters()}
        return [name for m in id_modules for name, p in m.named_parameters() if id(p) in det_ids]

    # -------------------------------------------------------------- inference

    @torch.no_grad()
    def search_frame(self, images: Tensor) -> List[FrameDetections]:
        """Detect vehicles in each gallery frame and embed them."""
        images = self._as_batch(images)
        size = tuple(images.shape[-2:])
        features = self.extract_features(images)
        proposals, _ = self.propose_regions(features, [size] * images.shape[0])
        o = self.config.embedding_dim

        results = []
        for i, frame_proposals in enumerate(proposals):
            frame_features = features[i : i + 1]
            _, det = self.detect(self.pool_regions(frame_features, [frame_proposals], RegionSource.PROPOSAL, image_size=size))
            boxes, scores = det.refined_boxes, det.scores
            keep = scores > self.config.score_thresh
            boxes, scores = boxes[keep], scores[keep]
            keep = box_ops.remove_small_boxes(boxes, MIN_BOX_SIDE)
            boxes, scores = boxes[keep], scores[keep]
            keep = box_ops.nms(boxes, scores, self.config.proposal_nms_thresh)
            boxes, scores = boxes[keep], scores[keep]
            if boxes.shape[0] == 0:
                results.append(FrameDetections(boxes, scores, features.new_zeros((0, o)), scores))
                continue

            _, ident = self.identify(self.pool_regions(frame_features, [boxes], RegionSource.PREDICTED, image_size=size))
            refined = ident.refined_boxes
            keep = box_ops.nms(refined, scores, self.config.box_nms_thresh)[: self.config.detections_per_frame]
            results.append(
                FrameDetections(
                    boxes=refined[keep],
                    scores=scores[keep],
                    embeddings=ident.embeddings[keep],
                    norm_scores=ident.norm_scores[keep],
                )
            )
        return results

    @torch.no_grad()
    def encode_query(self, crop: Tensor) -> IdentityEmbedding:
        """Embed a query crop through the gallery path.

        The crop is placed on a mean-colored canvas of at least
        `min_query_side` pixels and its full extent is the single region
        routed through stem, pooling and identity branch.
        """
        if crop.dim() != 3 or crop.shape[0] != 3 or crop.shape[1] == 0 or crop.shape[2] == 0:
            raise ContractError(f"expected a [3, h, w] crop, got {tuple(crop.shape)}")
        crop = crop.to(self.device, self.pixel_mean.dtype)
        h, w = crop.shape[-2:]
        side = self.min_query_side
        canvas = self.pixel_mean.expand(3, max(h, side), max(w, side)).clone()
        canvas[:, :h, :w] = crop
        features = self.extract_features(canvas)
        region = torch.tensor([[0.0, 0.0, float(w), float(h)]], device=self.device)
        batch = self.pool_regions(
            features,
            [region],
            RegionSource.GROUND_TRUTH,
            identities=[torch.tensor([UNLABELED])],
            image_size=tuple(canvas.shape[-2:]),
        )
        _, ident = self.identify(batch)
        return ident.outputs()[0]

    # --------------------------------------------------------------- training

    def _match(self, boxes: List[Tensor], targets: List[FrameTargets]):
        """Per-frame (labels 1/0/-1, matched gt boxes, identities with -1 for background)."""
        labels, matched_boxes, identities = [], [], []
        for frame_boxes, target in zip(boxes, targets):
            gt_boxes = target.boxes.to(frame_boxes)
            gt_ids = target.identities.to(frame_boxes.device).long()
            if gt_boxes.shape[0] == 0:
                labels.append(torch.zeros(len(frame_boxes), dtype=torch.long, device=frame_boxes.device))
                matched_boxes.append(torch.zeros_like(frame_boxes))
                identities.append(torch.full((len(frame_boxes),), -1, dtype=torch.long, device=frame_boxes.device))
                continue
            matched = self.proposal_matcher(box_ops.box_iou(gt_boxes, frame_boxes))
            clamped = matched.clamp(min=0)
            frame_labels = (matched >= 0).long()
            frame_labels[matched == Matcher.BETWEEN_THRESHOLDS] = -1
            frame_ids = gt_ids[clamped].clone()
            frame_ids[matched < 0] = -1
            labels.append(frame_labels)
            matched_boxes.append(gt_boxes[clamped])
            identities.append(frame_ids)
        return labels, matched_boxes, identities

    def forward(self, images: Tensor, targets: Optional[List[FrameTargets]] = None):
        if not self.training:
            return self.search_frame(images)
        if targets is None:
            raise ContractError("training forward needs per-frame targets")
        images = self._as_batch(images)
        if len(targets) != images.shape[0]:
            raise ContractError(f"{len(targets)} targets for {images.shape[0]} frames")
        size = tuple(images.shape[-2:])
        sizes = [size] * images.shape[0]
        gt_boxes = [t.boxes.to(self.device, images.dtype) for t in targets]
        gt_ids = [t.identities.to(self.device).long() for t in targets]

        features = self.extract_features(images)
        proposals, rpn_losses = self.propose_regions(features, sizes, targets)

        # detection branch on sampled proposals (ground truth appended)
        proposals = [torch.cat([p, g]) for p, g in zip(proposals, gt_boxes)]
        labels, matched, _ = self._match(proposals, targets)
        pos, neg = self.fg_bg_sampler(labels)
        sampled = [torch.where(p | n)[0] for p, n in zip(pos, neg)]
        proposals = [p[s] for p, s in zip(proposals, sampled)]
        labels = [lab[s] for lab, s in zip(labels, sampled)]
        matched = [m[s] for m, s in zip(matched, sampled)]
        reg_targets = self.box_coder.encode(matched, proposals)

        det_batch = self.pool_regions(features, proposals, RegionSource.PROPOSAL, image_size=size)
        det_branch, det = self.detect(det_batch)
        proposal_text = self.det_text_proj(det_branch)

        # identity branch on the detection branch's boxes
        predicted = list(det.refined_boxes.detach().split([len(p) for p in proposals]))
        predicted = [p[box_ops.remove_small_boxes(p, MIN_BOX_SIDE)] for p in predicted]
        box_labels, box_matched, box_ids = self._match(predicted, targets)
        box_reg_targets = self.box_coder.encode(box_matched, predicted)
        pred_batch = self.pool_regions(features, predicted, RegionSource.PREDICTED, identities=box_ids, image_size=size)
        _, box_ident = self.identify(pred_batch)

        # identity branch on ground-truth boxes
        gt_batch = self.pool_regions(features, gt_boxes, RegionSource.GROUND_TRUTH, identities=gt_ids, image_size=size)
        gt_branch, gt_ident = self.identify(gt_batch)

        return TrainingForward(
            rpn_losses=rpn_losses,
            proposal_logits=det.logits,
            proposal_deltas=det.deltas,
            proposal_labels=torch.cat(labels),
            proposal_reg_targets=torch.cat(reg_targets),
            proposal_text=proposal_text,
            box_deltas=box_ident.deltas,
            box_norm_logits=box_ident.norm_logits,
            box_labels=torch.cat(box_labels),
            box_reg_targets=torch.cat(box_reg_targets) if box_reg_targets else features.new_zeros((0, 4)),
            box_embeddings=box_ident.embeddings,
            box_identities=pred_batch.identities,
            gt_embeddings=gt_ident.embeddings,
            gt_identities=gt_batch.identities,
            gt_frame_indices=gt_batch.frame_indices,
            gt_text=self.id_text_proj(gt_branch),
            gt_box_probs=F.softmax(self.box_classifier(gt_branch), dim=1),
            image_probs=torch.sigmoid(self.image_classifier(features)),
        )
