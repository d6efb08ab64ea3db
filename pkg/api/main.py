"""
Vehicle Search API
FastAPI service answering "where does this vehicle appear" against the
gallery detections indexed in Elasticsearch.
"""
import os
import logging
from functools import lru_cache
from typing import Dict, List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Security
from fastapi.middleware.cors import CORSMiddleware
from fastapi.security.api_key import APIKeyHeader
from pydantic import BaseModel, Field, model_validator
from dotenv import load_dotenv

from datamodel.errors import ContractError
from evaluation.io import read_query_embeddings
from indexers.elasticsearch_client import gallery_index_name, get_client
from indexers.gallery import gallery_stats, search_gallery
from api.routes.admin import router as admin_router

load_dotenv()

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
)
logger = logging.getLogger(__name__)

_cors_origins = os.getenv("CORS_ALLOWED_ORIGINS", "http://localhost:3000").split(",")

app = FastAPI(
    title="Vehicle Search API",
    description="Query-by-example vehicle search over multi-camera gallery frames",
    version="1.0.0"
)

app.include_router(admin_router)

app.add_middleware(
    CORSMiddleware,
    allow_origins=_cors_origins,
    allow_credentials=True,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["Content-Type", "Authorization", "X-API-Key"],
)

_api_key_header = APIKeyHeader(name="X-API-Key", auto_error=False)


def _require_api_key(api_key: Optional[str] = Security(_api_key_header)) -> str:
    expected = os.getenv("SEARCH_API_KEY")
    if not expected:
        raise HTTPException(status_code=500, detail="SEARCH_API_KEY not configured on server")
    if api_key != expected:
        raise HTTPException(status_code=401, detail="Invalid or missing API key")
    return api_key


@lru_cache(maxsize=4)
def _query_embeddings(path: str) -> Dict[str, np.ndarray]:
    return read_query_embeddings(path)


class SearchRequest(BaseModel):
    embedding: Optional[List[float]] = None
    # looked up in the file named by QUERY_EMBEDDINGS_FILE
    query_id: Optional[str] = None
    k: int = Field(10, ge=1, le=1000)
    min_score: Optional[float] = Field(None, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _exactly_one_source(self):
        if (self.embedding is None) == (self.query_id is None):
            raise ValueError("provide exactly one of embedding or query_id")
        return self


@app.get("/")
def root():
    """Root endpoint"""
    return {
        "service": "Vehicle Search API",
        "version": "1.0.0",
        "status": "operational"
    }


@app.get("/health")
def health_check():
    try:
        es = get_client()
        if not es.ping():
            raise ConnectionError("ping returned False")
        return {
            "status": "healthy",
            "service": "vehicle-search",
            "elasticsearch": "connected"
        }
    except Exception as e:
        raise HTTPException(
            status_code=503,
            detail=f"Elasticsearch unavailable: {str(e)}"
        )


@app.get("/api/v1/gallery/stats")
def get_gallery_stats():
    """Detection, frame and per-weather counts of the gallery index"""
    try:
        return {"index": gallery_index_name(), **gallery_stats(es=get_client())}
    except Exception as e:
        logger.error(f"gallery_stats error: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to read gallery stats: {str(e)}")


@app.post("/api/v1/search")
def search(body: SearchRequest, _key: str = Security(_require_api_key)):
    """
    Rank gallery detections by cosine similarity to a query embedding

    - **embedding**: L2-normalised (or not, it is normalised here) query embedding
    - **query_id**: alternatively, the id of a pre-encoded query
    - **k**: number of detections to return
    - **min_score**: drop detections whose detector confidence is below this
    """
    embedding = body.embedding
    if body.query_id is not None:
        path = os.getenv("QUERY_EMBEDDINGS_FILE")
        if not path:
            raise HTTPException(status_code=500, detail="QUERY_EMBEDDINGS_FILE not configured on server")
        embeddings = _query_embeddings(path)
        if body.query_id not in embeddings:
            raise HTTPException(status_code=404, detail=f"Query '{body.query_id}' not found")
        embedding = embeddings[body.query_id].tolist()

    try:
        hits = search_gallery(embedding, k=body.k, min_score=body.min_score, es=get_client())
    except ContractError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except Exception as e:
        logger.error(f"search error: {e}")
        raise HTTPException(status_code=500, detail=f"Search failed: {str(e)}")

    return {
        "query_id": body.query_id,
        "k": body.k,
        "count": len(hits),
        "results": hits,
    }


if __name__ == "__main__":
    import uvicorn
    port = int(os.getenv("API_PORT", 8000))
    uvicorn.run(app, host="0.0.0.0", port=port)
