"""
Admin routes for gallery maintenance.
All routes require X-Admin-Token header matching ADMIN_TOKEN env var.
"""

import os
import uuid
import logging
from datetime import datetime, timezone
from typing import Dict, Optional

from fastapi import APIRouter, BackgroundTasks, Depends, HTTPException
from fastapi.security.api_key import APIKeyHeader
from pydantic import BaseModel

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/admin", tags=["admin"])

_admin_key_header = APIKeyHeader(name="X-Admin-Token", auto_error=False)

# job_id -> {status, started_at, finished_at, result, error, request}, oldest first
_jobs: Dict[str, Dict] = {}

FINISHED_STATUSES = ("completed", "failed")


def _max_jobs() -> int:
    return max(1, int(os.getenv("ADMIN_MAX_JOBS", "100")))


def _evict_finished_jobs(limit: int) -> int:
    """Drop the oldest finished jobs until fewer than `limit` remain; queued and running jobs stay."""
    evicted = 0
    for job_id in [k for k, v in _jobs.items() if v["status"] in FINISHED_STATUSES]:
        if len(_jobs) < limit:
            break
        del _jobs[job_id]
        evicted += 1
    if evicted:
        logger.info("[ADMIN] evicted %d finished jobs", evicted)
    return evicted


def _require_admin_token(token: Optional[str] = Depends(_admin_key_header)) -> str:
    expected = os.getenv("ADMIN_TOKEN")
    if not expected:
        raise HTTPException(
            status_code=503,
            detail="ADMIN_TOKEN is not configured on this server. Set the environment variable.",
        )
    if token != expected:
        raise HTTPException(status_code=401, detail="Invalid or missing X-Admin-Token")
    return token


class IndexGalleryRequest(BaseModel):
    detections_path: str
    manifest_path: str
    index: Optional[str] = None
    model_tag: str = ""


def _run_index_job(job_id: str, request: IndexGalleryRequest) -> None:
    # heavy imports stay out of API startup
    from datamodel.manifest import load_manifest
    from evaluation.io import read_detections
    from indexers.gallery import index_gallery

    _jobs[job_id]["status"] = "running"
    logger.info("[ADMIN] index-gallery job=%s started detections=%s", job_id, request.detections_path)

    try:
        gallery = read_detections(request.detections_path)
        manifest = load_manifest(request.manifest_path)
        gallery.check_against(manifest)
        created = index_gallery(gallery, manifest, index=request.index, model_tag=request.model_tag)
        _jobs[job_id]["status"] = "completed"
        _jobs[job_id]["result"] = {"indexed": created, "frames": len(gallery.frames)}
        logger.info("[ADMIN] index-gallery job=%s completed indexed=%d", job_id, created)
    except Exception as exc:
        _jobs[job_id]["status"] = "failed"
        _jobs[job_id]["error"] = str(exc)
        logger.error("[ADMIN] index-gallery job=%s failed: %s", job_id, exc)
    finally:
        _jobs[job_id]["finished_at"] = datetime.now(tz=timezone.utc).isoformat()


@router.post("/jobs/index-gallery")
def trigger_index_gallery(
    body: IndexGalleryRequest,
    background_tasks: BackgroundTasks,
    _token: str = Depends(_require_admin_token),
):
    _evict_finished_jobs(_max_jobs())
    job_id = str(uuid.uuid4())
    _jobs[job_id] = {
        "job_id": job_id,
        "status": "queued",
        "started_at": datetime.now(tz=timezone.utc).isoformat(),
        "finished_at": None,
        "result": None,
        "error": None,
        "request": body.model_dump(),
    }

    background_tasks.add_task(_run_index_job, job_id, body)
    logger.info("[ADMIN] index-gallery queued job=%s", job_id)

    return {"queued": True, "job_id": job_id}


@router.get("/jobs/{job_id}")
def get_job_status(
    job_id: str,
    _token: str = Depends(_require_admin_token),
):
    job = _jobs.get(job_id)
    if job is None:
        raise HTTPException(status_code=404, detail=f"Job '{job_id}' not found")
    return dict(job)
