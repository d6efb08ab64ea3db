"""
Elasticsearch mapping of the gallery index.

NOTE: the embedding dimension is fixed when the index is created. A model
with a different embedding size needs a new index (or DELETE + re-index).
"""

from typing import Dict


def gallery_mapping(dim: int) -> Dict:
    return {
        "settings": {
            "number_of_shards": 1,
            "number_of_replicas": 0,
        },
        "mappings": {
            "properties": {
                "frame_id": {"type": "keyword"},
                "scene_id": {"type": "keyword"},
                "camera_id": {"type": "keyword"},
                "weather": {"type": "keyword"},
                "image_path": {"type": "keyword", "index": False},
                # detector confidence of the box
                "score": {"type": "float"},
                "box": {"type": "float"},
                "embedding": {"type": "dense_vector", "dims": dim, "index": False},
                "model": {"type": "keyword"},
                "indexed_at": {"type": "date"},
            }
        },
    }
