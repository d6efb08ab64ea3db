import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from datamodel.records import DatasetManifest, QueryRecord
from evaluation.matching import (
    IOU_THRESHOLD,
    GalleryDetections,
    RankedResult,
    average_precision,
    match_and_rank,
)

logger = logging.getLogger(__name__)


class ReportError(RuntimeError):
    """Raised when there is nothing to evaluate."""
    pass


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    iou_threshold: float = Field(IOU_THRESHOLD, gt=0, lt=1)
    exclude_query_frame: bool = False
    confidence_floor: Optional[float] = None
    per_weather: bool = True


@dataclass
class EncodedQuery:
    record: QueryRecord
    embedding: np.ndarray


@dataclass
class QueryScore:
    query_id: str
    ap: float
    top1: bool
    num_gt: int


@dataclass
class EvalReport:
    mAP: float
    top1: float
    per_query_ap: List[QueryScore]
    excluded: List[str] = field(default_factory=list)
    per_weather: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "mAP": self.mAP,
            "top1": self.top1,
            "num_queries": len(self.per_query_ap),
            "excluded_queries": len(self.excluded),
            "per_weather": self.per_weather,
            "per_query": [asdict(q) for q in self.per_query_ap],
        }


def summarize(
    ranked: Sequence[RankedResult],
    queries: Sequence[QueryRecord],
    gt: DatasetManifest,
    per_weather: bool = True,
) -> EvalReport:
    """Reduce ranked results to mAP / Top-1, excluding queries without ground truth."""
    frames = gt.frame_index()
    scores, excluded = [], []
    groups = defaultdict(list)
    for result, query in zip(ranked, queries):
        if result.num_gt < 1:
            excluded.append(result.query_id)
            continue
        score = QueryScore(
            query_id=result.query_id,
            ap=average_precision(result),
            top1=bool(result.tp_flags and result.tp_flags[0]),
            num_gt=result.num_gt,
        )
        scores.append(score)
        frame = frames.get(query.source_frame_id)
        if frame is not None:
            groups[frame.weather_tag.value].append(score)
    if excluded:
        logger.warning(f"{len(excluded)} queries have no ground-truth box in the gallery and were excluded")
    if not scores:
        raise ReportError("no query has a ground-truth positive in the gallery")

    def _reduce(items: List[QueryScore]) -> Dict[str, float]:
        return {
            "mAP": sum(s.ap for s in items) / len(items),
            "top1": sum(1 for s in items if s.top1) / len(items),
            "queries": len(items),
        }

    overall = _reduce(scores)
    return EvalReport(
        mAP=overall["mAP"],
        top1=overall["top1"],
        per_query_ap=scores,
        excluded=excluded,
        per_weather={k: _reduce(v) for k, v in sorted(groups.items())} if per_weather else {},
    )


def rank_queries(
    queries: Sequence[EncodedQuery],
    gallery: GalleryDetections,
    gt: DatasetManifest,
    config: EvalConfig,
) -> List[RankedResult]:
    return [
        match_and_rank(
            q.record.query_id,
            q.embedding,
            q.record.box.identity,
            gallery,
            gt,
            exclude_frame=q.record.source_frame_id if config.exclude_query_frame else None,
            confidence_floor=config.confidence_floor,
            iou_threshold=config.iou_threshold,
        )
        for q in queries
    ]


def evaluate(
    queries: Sequence[EncodedQuery],
    gallery: GalleryDetections,
    gt: DatasetManifest,
    config: Optional[EvalConfig] = None,
) -> EvalReport:
    config = config or EvalConfig()
    if not queries:
        raise ReportError("empty query set")
    if not gt.frames:
        raise ReportError("empty gallery")
    gallery.check_against(gt)
    ranked = rank_queries(queries, gallery, gt, config)
    report = summarize(ranked, [q.record for q in queries], gt, config.per_weather)
    logger.info(f"Evaluated {len(report.per_query_ap)} queries: mAP={report.mAP:.4f} top1={report.top1:.4f}")
    return report
