"""
Ranking detected gallery boxes against a query and marking true positives.

A detection is a true positive when its IoU with a not yet consumed
ground-truth box of the query's identity, in the same frame, exceeds the
threshold. Detections are visited in rank order, so the highest-ranked
detection claims a ground-truth box first.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from datamodel.errors import ContractError
from datamodel.records import DatasetManifest, FrameRecord

IOU_THRESHOLD = 0.5
UNIT_NORM_TOLERANCE = 1e-3


@dataclass
class GalleryFrame:
    frame_id: str
    boxes: np.ndarray  # [n, 4]
    scores: np.ndarray  # [n] detector confidence
    embeddings: np.ndarray  # [n, o], unit rows

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        n = len(self.boxes)
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if n:
            self.embeddings = emb.reshape(n, -1)
        else:
            self.embeddings = np.zeros((0, emb.shape[-1] if emb.ndim == 2 else 0))
        if len(self.scores) != n or len(self.embeddings) != n:
            raise ContractError(f"frame {self.frame_id}: boxes, scores and embeddings disagree in length")
        if n:
            norms = np.linalg.norm(self.embeddings, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
                raise ContractError(f"frame {self.frame_id}: gallery embeddings must be unit vectors")

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass
class GalleryDetections:
    frames: Dict[str, GalleryFrame] = field(default_factory=dict)

    @property
    def dim(self) -> Optional[int]:
        for frame in self.frames.values():
            if len(frame):
                return frame.embeddings.shape[1]
        return None

    @property
    def num_detections(self) -> int:
        return sum(len(f) for f in self.frames.values())

    def add(self, frame: GalleryFrame) -> None:
        self.frames[frame.frame_id] = frame

    def check_against(self, gt: DatasetManifest) -> None:
        """The gallery holds exactly the manifest's frames; frames without detections are present but empty."""
        known = gt.frame_index()
        unknown = sorted(f for f in self.frames if f not in known)
        if unknown:
            raise ContractError(f"{len(unknown)} gallery frames are not in manifest {gt.name}: {unknown[:5]}")
        uncovered = sorted(f for f in known if f not in self.frames)
        if uncovered:
            raise ContractError(f"gallery is missing {len(uncovered)} frames of manifest {gt.name}: {uncovered[:5]}")


@dataclass
class RankedEntry:
    frame_id: str
    box: tuple
    score: float


@dataclass
class RankedResult:
    query_id: str
    entries: List[RankedEntry]
    tp_flags: List[bool]
    num_gt: int


def _iou_row(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = (box[2] - box[0]) * (box[3] - box[1]) + (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1]) - inter
    return inter / union


def _unit(vector) -> np.ndarray:
    q = np.asarray(vector, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(q)
    if norm == 0:
        raise ContractError("query embedding is the zero vector")
    return q / norm


def match_and_rank(
    query_id: str,
    query_embedding,
    query_identity: int,
    gallery: GalleryDetections,
    gt: DatasetManifest,
    exclude_frame: Optional[str] = None,
    confidence_floor: Optional[float] = None,
    iou_threshold: float = IOU_THRESHOLD,
) -> RankedResult:
    q = _unit(query_embedding)
    dim = gallery.dim
    if dim is not None and dim != len(q):
        raise ContractError(f"query embedding has dimension {len(q)}, gallery has {dim}")

    frames = [f for f in gt.frames if f.frame_id != exclude_frame]
    num_gt = sum(1 for f in frames for a in f.annotations if a.identity == query_identity)

    frame_ids, det_index, sims = [], [], []
    for frame in frames:
        det = gallery.frames.get(frame.frame_id)
        if det is None or not len(det):
            continue
        keep = np.arange(len(det))
        if confidence_floor is not None:
            keep = keep[det.scores >= confidence_floor]
        if not len(keep):
            continue
        frame_ids.extend([frame.frame_id] * len(keep))
        det_index.extend(keep.tolist())
        sims.append(det.embeddings[keep] @ q)
    if not sims:
        return RankedResult(query_id, [], [], num_gt)

    return rank_scores(
        query_id, query_identity, frame_ids, det_index, np.concatenate(sims), gallery, frames, num_gt, iou_threshold
    )


def rank_scores(
    query_id: str,
    query_identity: int,
    frame_ids: List[str],
    det_index: List[int],
    scores: np.ndarray,
    gallery: GalleryDetections,
    frames: List[FrameRecord],
    num_gt: int,
    iou_threshold: float = IOU_THRESHOLD,
) -> RankedResult:
    """Sort scored detections (stable, descending) and flag true positives greedily in rank order."""
    order = np.argsort(-scores, kind="stable")
    truth = {
        f.frame_id: np.array([a.box for a in f.annotations if a.identity == query_identity], dtype=np.float64).reshape(-1, 4)
        for f in frames
    }
    consumed = {fid: np.zeros(len(b), dtype=bool) for fid, b in truth.items()}

    entries, tp_flags = [], []
    for k in order:
        fid, i = frame_ids[k], det_index[k]
        box = gallery.frames[fid].boxes[i]
        entries.append(RankedEntry(fid, tuple(float(v) for v in box), float(scores[k])))
        hit = False
        gt_boxes = truth[fid]
        if len(gt_boxes):
            overlaps = _iou_row(box, gt_boxes)
            overlaps[consumed[fid]] = -1.0
            best = int(np.argmax(overlaps))
            if overlaps[best] > iou_threshold:
                consumed[fid][best] = True
                hit = True
        tp_flags.append(hit)
    return RankedResult(query_id, entries, tp_flags, num_gt)


def average_precision(ranked: RankedResult, num_gt: Optional[int] = None) -> float:
    """Sum of precision@k over true-positive ranks k, divided by the number of ground-truth boxes."""
    num_gt = ranked.num_gt if num_gt is None else num_gt
    if num_gt < 1:
        raise ContractError("average precision needs at least one ground-truth box")
    hits = 0
    total = 0.0
    for k, tp in enumerate(ranked.tp_flags, start=1):
        if tp:
            hits += 1
            total += hits / k
    return total / num_gt
