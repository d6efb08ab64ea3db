"""
Brute-force evaluator for small instances, used to cross-check `evaluate`.

Plain Python throughout: cosine by explicit sums, a full sort of every
(frame, detection) pair, an exhaustive scan of ground-truth boxes for
each ranked detection, and AP / Top-1 / per-weather averages recomputed
here rather than taken from the fast path.
"""

import logging
import math
from collections import defaultdict
from typing import Dict, List, Optional, Sequence

from datamodel.boxes import iou
from datamodel.errors import ContractError
from datamodel.records import DatasetManifest
from evaluation.matching import GalleryDetections, RankedEntry, RankedResult
from evaluation.report import EncodedQuery, EvalConfig, EvalReport, QueryScore, ReportError

logger = logging.getLogger(__name__)

MAX_FRAMES = 50
MAX_BOXES = 200


class OracleRefusal(RuntimeError):
    """Raised when an instance is too large for the brute-force evaluator."""
    pass


def _cosine(u: List[float], v: List[float]) -> float:
    if len(u) != len(v):
        raise ContractError(f"embedding widths differ: {len(u)} vs {len(v)}")
    dot = 0.0
    for i in range(len(u)):
        dot += u[i] * v[i]
    return dot / math.sqrt(sum(x * x for x in u))


def _rank_one(query: EncodedQuery, gallery: GalleryDetections, gt: DatasetManifest, config: EvalConfig) -> RankedResult:
    q = [float(v) for v in query.embedding]
    identity = query.record.box.identity
    exclude = query.record.source_frame_id if config.exclude_query_frame else None

    candidates = []
    num_gt = 0
    for frame_pos, frame in enumerate(gt.frames):
        if frame.frame_id == exclude:
            continue
        num_gt += sum(1 for a in frame.annotations if a.identity == identity)
        det = gallery.frames.get(frame.frame_id)
        if det is None:
            continue
        if not (len(det.boxes) == len(det.scores) == len(det.embeddings)):
            raise ContractError(f"frame {frame.frame_id}: boxes, scores and embeddings disagree in length")
        for i in range(len(det.boxes)):
            score = float(det.scores[i])
            if config.confidence_floor is not None and score < config.confidence_floor:
                continue
            sim = _cosine(q, [float(v) for v in det.embeddings[i]])
            candidates.append((-sim, frame_pos, i, frame.frame_id))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))

    used = set()
    entries, flags = [], []
    frames = gt.frame_index()
    for neg_sim, _, i, frame_id in candidates:
        box = tuple(float(v) for v in gallery.frames[frame_id].boxes[i])
        entries.append(RankedEntry(frame_id, box, -neg_sim))
        best, best_iou = None, -1.0
        for j, ann in enumerate(frames[frame_id].annotations):
            if ann.identity != identity or (frame_id, j) in used:
                continue
            overlap = iou(box, ann.box)
            if overlap > best_iou:
                best, best_iou = j, overlap
        if best is not None and best_iou > config.iou_threshold:
            used.add((frame_id, best))
            flags.append(True)
        else:
            flags.append(False)
    return RankedResult(query.record.query_id, entries, flags, num_gt)


def _ap(flags: List[bool], num_gt: int) -> float:
    # mean over ground-truth boxes of precision at each recovered box; missed boxes add 0
    precisions = []
    for k in range(1, len(flags) + 1):
        if flags[k - 1]:
            precisions.append(sum(1 for f in flags[:k] if f) / k)
    return sum(precisions) / num_gt


def _mean(scores: List[QueryScore]) -> Dict[str, float]:
    return {
        "mAP": math.fsum(s.ap for s in scores) / len(scores),
        "top1": len([s for s in scores if s.top1]) / len(scores),
        "queries": len(scores),
    }


def oracle_evaluate(
    queries: Sequence[EncodedQuery],
    gallery: GalleryDetections,
    gt: DatasetManifest,
    config: Optional[EvalConfig] = None,
) -> EvalReport:
    config = config or EvalConfig()
    if len(gt.frames) > MAX_FRAMES or gallery.num_detections > MAX_BOXES or gt.num_boxes > MAX_BOXES:
        raise OracleRefusal(
            f"instance too large for the oracle ({len(gt.frames)} frames, {gallery.num_detections} detections)"
        )
    weather = {frame.frame_id: frame.weather_tag.value for frame in gt.frames}
    scores, excluded = [], []
    groups = defaultdict(list)
    for query in queries:
        result = _rank_one(query, gallery, gt, config)
        if result.num_gt == 0:
            excluded.append(result.query_id)
            continue
        score = QueryScore(
            query_id=result.query_id,
            ap=_ap(result.tp_flags, result.num_gt),
            top1=len(result.tp_flags) > 0 and result.tp_flags[0],
            num_gt=result.num_gt,
        )
        scores.append(score)
        if query.record.source_frame_id in weather:
            groups[weather[query.record.source_frame_id]].append(score)
    if not scores:
        raise ReportError("no query has a ground-truth positive in the gallery")
    if excluded:
        logger.warning(f"oracle: {len(excluded)} queries without ground truth excluded")

    overall = _mean(scores)
    return EvalReport(
        mAP=overall["mAP"],
        top1=overall["top1"],
        per_query_ap=scores,
        excluded=excluded,
        per_weather={k: _mean(groups[k]) for k in sorted(groups)} if config.per_weather else {},
    )
