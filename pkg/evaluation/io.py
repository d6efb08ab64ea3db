"""
Detections interchange and report files.

Detections: header {"kind": "detections", "schema_version", "dim"} then one
line per detected box {"frame_id", "box", "score", "embedding"}. The header
also lists every gallery frame under "frames", so frames without any
detection survive the round trip. Query embeddings use the same layout
with kind "query_embeddings" and lines {"query_id", "embedding"}.
"""

from collections import defaultdict
from pathlib import Path
from typing import Dict, Union

import numpy as np
import orjson

from datamodel.errors import ManifestParseError
from evaluation.matching import GalleryDetections, GalleryFrame
from evaluation.report import EvalReport

SCHEMA_VERSION = 1
PathLike = Union[str, Path]


def _dumps(obj) -> bytes:
    return orjson.dumps(obj, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY) + b"\n"


def _records(path: Path, kind: str):
    lines = [line for line in Path(path).read_bytes().splitlines() if line.strip()]
    if not lines:
        raise ManifestParseError("empty file", 1, str(path))
    header = orjson.loads(lines[0])
    if header.get("kind") != kind or header.get("schema_version") != SCHEMA_VERSION:
        raise ManifestParseError(f"expected a '{kind}' header with schema_version {SCHEMA_VERSION}", 1, str(path))
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            yield orjson.loads(line)
        except orjson.JSONDecodeError as e:
            raise ManifestParseError(str(e), line_no, str(path)) from e


def write_detections(gallery: GalleryDetections, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        header = {"kind": "detections", "schema_version": SCHEMA_VERSION, "dim": gallery.dim, "frames": sorted(gallery.frames)}
        f.write(_dumps(header))
        for frame_id in sorted(gallery.frames):
            frame = gallery.frames[frame_id]
            for i in range(len(frame)):
                f.write(
                    _dumps(
                        {
                            "frame_id": frame_id,
                            "box": frame.boxes[i].tolist(),
                            "score": float(frame.scores[i]),
                            "embedding": frame.embeddings[i].tolist(),
                        }
                    )
                )
    return path


def _header(path: Path) -> dict:
    with open(path, "rb") as f:
        return orjson.loads(f.readline() or b"{}")


def read_detections(path: PathLike) -> GalleryDetections:
    grouped = defaultdict(lambda: ([], [], []))
    for record in _records(Path(path), "detections"):
        boxes, scores, embeddings = grouped[record["frame_id"]]
        boxes.append(record["box"])
        scores.append(record["score"])
        embeddings.append(record["embedding"])
    header = _header(Path(path))
    dim = header.get("dim") or 0
    gallery = GalleryDetections()
    for frame_id in header.get("frames", []):
        if frame_id not in grouped:
            gallery.add(GalleryFrame(frame_id, np.zeros((0, 4)), np.zeros(0), np.zeros((0, dim))))
    for frame_id, (boxes, scores, embeddings) in sorted(grouped.items()):
        gallery.add(GalleryFrame(frame_id, np.array(boxes), np.array(scores), np.array(embeddings)))
    return gallery


def write_query_embeddings(embeddings: Dict[str, np.ndarray], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_dumps({"kind": "query_embeddings", "schema_version": SCHEMA_VERSION}))
        for query_id in sorted(embeddings):
            f.write(_dumps({"query_id": query_id, "embedding": np.asarray(embeddings[query_id]).tolist()}))
    return path


def read_query_embeddings(path: PathLike) -> Dict[str, np.ndarray]:
    return {r["query_id"]: np.asarray(r["embedding"], dtype=np.float64) for r in _records(Path(path), "query_embeddings")}


def format_report(report: EvalReport, title: str = "VEHICLE SEARCH EVALUATION") -> str:
    lines = [
        "=" * 80,
        title,
        "=" * 80,
        f"Queries evaluated: {len(report.per_query_ap)}",
        f"Queries excluded (no ground truth): {len(report.excluded)}",
        f"mAP:   {report.mAP * 100:.2f}",
        f"Top-1: {report.top1 * 100:.2f}",
    ]
    if report.per_weather:
        lines.append("")
        lines.append(f"{'weather':<10}{'queries':>10}{'mAP':>10}{'Top-1':>10}")
        for weather, row in report.per_weather.items():
            lines.append(f"{weather:<10}{row['queries']:>10}{row['mAP'] * 100:>10.2f}{row['top1'] * 100:>10.2f}")
    lines.append("=" * 80)
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir: PathLike, stem: str = "report") -> Dict[str, Path]:
    """Write `<stem>.txt` (human readable) and `<stem>.json` (machine summary)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = out_dir / f"{stem}.txt"
    text.write_text(format_report(report), encoding="utf-8")
    summary = out_dir / f"{stem}.json"
    summary.write_bytes(orjson.dumps(report.summary(), option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2) + b"\n")
    return {"text": text, "json": summary}
