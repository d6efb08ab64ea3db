"""Gallery detections in Elasticsearch: bulk indexing and exact cosine search."""

import logging
from datetime import datetime, timezone
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
from elasticsearch import Elasticsearch
from tenacity import retry, stop_after_attempt, wait_exponential

from datamodel.errors import ContractError
from datamodel.records import DatasetManifest
from evaluation.matching import GalleryDetections
from indexers.elasticsearch_client import bulk_index, ensure_index, gallery_index_name, get_client
from indexers.mappings import gallery_mapping

logger = logging.getLogger(__name__)


def gallery_documents(gallery: GalleryDetections, manifest: DatasetManifest, model_tag: str = "") -> Iterator[Dict]:
    frames = manifest.frame_index()
    now = datetime.now(tz=timezone.utc).isoformat()
    for frame_id in sorted(gallery.frames):
        det = gallery.frames[frame_id]
        frame = frames.get(frame_id)
        for i in range(len(det)):
            yield {
                "_id": f"{model_tag}:{frame_id}:{i}" if model_tag else f"{frame_id}:{i}",
                "frame_id": frame_id,
                "scene_id": frame.scene_id if frame else None,
                "camera_id": frame.camera_id if frame else None,
                "weather": frame.weather_tag.value if frame else None,
                "image_path": frame.image_path if frame else None,
                "score": float(det.scores[i]),
                "box": [float(v) for v in det.boxes[i]],
                "embedding": [float(v) for v in det.embeddings[i]],
                "model": model_tag,
                "indexed_at": now,
            }


def index_gallery(
    gallery: GalleryDetections,
    manifest: DatasetManifest,
    index: Optional[str] = None,
    model_tag: str = "",
    es: Optional[Elasticsearch] = None,
) -> int:
    """Create the index if needed and bulk-load every detection; returns documents created."""
    dim = gallery.dim
    if dim is None:
        logger.warning("gallery has no detections, nothing to index")
        return 0
    index = index or gallery_index_name()
    es = es or get_client()
    ensure_index(index, gallery_mapping(dim), es=es)
    created = bulk_index(index, gallery_documents(gallery, manifest, model_tag), es=es)
    logger.info(f"Indexed {created} gallery detections into {index}")
    return created


@retry(stop=stop_after_attempt(3), wait=wait_exponential(multiplier=1, min=1, max=8), reraise=True)
def _search(es: Elasticsearch, index: str, body: Dict) -> Dict:
    return es.search(index=index, **body)


def search_gallery(
    embedding: Sequence[float],
    k: int = 10,
    index: Optional[str] = None,
    min_score: Optional[float] = None,
    es: Optional[Elasticsearch] = None,
) -> List[Dict]:
    """Top-k detections by cosine similarity to `embedding` (exact scan via script_score)."""
    query = np.asarray(embedding, dtype=np.float64).reshape(-1)
    norm = np.linalg.norm(query)
    if norm == 0:
        raise ContractError("search embedding is the zero vector")
    query = (query / norm).tolist()

    base = {"match_all": {}} if min_score is None else {"range": {"score": {"gte": min_score}}}
    body = {
        "size": k,
        "query": {
            "script_score": {
                "query": base,
                "script": {
                    # shifted by 1 because scores must be non-negative
                    "source": "cosineSimilarity(params.q, 'embedding') + 1.0",
                    "params": {"q": query},
                },
            }
        },
        "_source": {"excludes": ["embedding"]},
    }
    result = _search(es or get_client(), index or gallery_index_name(), body)
    return [
        {
            "id": hit["_id"],
            "similarity": float(hit["_score"]) - 1.0,
            **hit["_source"],
        }
        for hit in result["hits"]["hits"]
    ]


def gallery_stats(index: Optional[str] = None, es: Optional[Elasticsearch] = None) -> Dict:
    es = es or get_client()
    body = {
        "size": 0,
        "aggs": {
            "frames": {"cardinality": {"field": "frame_id"}},
            "weather": {"terms": {"field": "weather", "size": 10}},
        },
    }
    result = es.search(index=index or gallery_index_name(), **body)
    aggs = result["aggregations"]
    return {
        "detections": result["hits"]["total"]["value"],
        "frames": aggs["frames"]["value"],
        "weather": {b["key"]: b["doc_count"] for b in aggs["weather"]["buckets"]},
    }
