from evaluation.io import (
    format_report,
    read_detections,
    read_query_embeddings,
    write_detections,
    write_query_embeddings,
    write_report,
)
from evaluation.matching import (
    IOU_THRESHOLD,
    GalleryDetections,
    GalleryFrame,
    RankedEntry,
    RankedResult,
    average_precision,
    match_and_rank,
    rank_scores,
)
from evaluation.oracle import OracleRefusal, oracle_evaluate
from evaluation.report import (
    EncodedQuery,
    EvalConfig,
    EvalReport,
    QueryScore,
    ReportError,
    evaluate,
    rank_queries,
    summarize,
)

__all__ = [
    "IOU_THRESHOLD",
    "EncodedQuery",
    "EvalConfig",
    "EvalReport",
    "GalleryDetections",
    "GalleryFrame",
    "OracleRefusal",
    "QueryScore",
    "RankedEntry",
    "RankedResult",
    "ReportError",
    "average_precision",
    "evaluate",
    "format_report",
    "match_and_rank",
    "oracle_evaluate",
    "rank_scores",
    "rank_queries",
    "read_detections",
    "read_query_embeddings",
    "summarize",
    "write_detections",
    "write_query_embeddings",
    "write_report",
]
