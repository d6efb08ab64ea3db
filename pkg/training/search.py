"""
Gallery search with a trained checkpoint: detect and embed every gallery
frame, embed every query crop, rank and evaluate.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from datamodel.records import DatasetManifest, QueryRecord
from evaluation.matching import GalleryDetections, GalleryFrame, RankedResult
from evaluation.report import EncodedQuery, EvalConfig, EvalReport, ReportError, rank_queries, summarize
from models.checkpoint import load_checkpoint
from models.crops import read_frame
from models.search_net import VehicleSearchNet
from training.data import MissingImagesError, resize_frame

logger = logging.getLogger(__name__)


@dataclass
class SearchRun:
    ranked: List[RankedResult]
    report: EvalReport
    gallery: GalleryDetections
    query_embeddings: Dict[str, np.ndarray]
    skipped: List[str]


def load_search_model(checkpoint: Union[str, Path], device: str = "cpu") -> VehicleSearchNet:
    archive = load_checkpoint(checkpoint)
    meta = archive.get("config", {}).get("model")
    if meta is None:
        raise ValueError(f"{checkpoint} does not record the model's identity count and text dimension")
    model = VehicleSearchNet(archive["backbone_config"], meta["num_identities"], meta["text_dim"])
    model.load_state_dict(archive["model"])
    return model.to(torch.device(device)).eval()


def encode_gallery(
    model: VehicleSearchNet,
    manifest: DatasetManifest,
    image_root: Union[str, Path],
    skip: Sequence[str] = (),
) -> GalleryDetections:
    """Detections in original frame coordinates with unit embeddings."""
    root = Path(image_root)
    size = model.config.image_size
    skipped = set(skip)
    gallery = GalleryDetections()
    for frame in manifest.frames:
        path = root / frame.image_path
        if str(path) in skipped:
            # unreadable frames stay in the gallery with no detections
            gallery.add(GalleryFrame(frame.frame_id, np.zeros((0, 4)), np.zeros(0), np.zeros((0, model.config.embedding_dim))))
            continue
        image, sx, sy = resize_frame(read_frame(path), size)
        det = model.search_frame(image)[0]
        scale = det.boxes.new_tensor([sx, sy, sx, sy])
        gallery.add(
            GalleryFrame(
                frame.frame_id,
                (det.boxes / scale).cpu().double().numpy(),
                det.scores.cpu().double().numpy(),
                F.normalize(det.embeddings.double(), dim=1).cpu().numpy(),
            )
        )
    logger.info(f"Encoded {len(gallery.frames)} gallery frames, {gallery.num_detections} detections")
    return gallery


def _query_scale(query: QueryRecord, manifest: DatasetManifest, size: Tuple[int, int]) -> Tuple[float, float]:
    frame = manifest.frame_index().get(query.source_frame_id)
    if frame is None:
        return 1.0, 1.0
    return size[1] / frame.width, size[0] / frame.height


def encode_queries(
    model: VehicleSearchNet,
    queries: Sequence[QueryRecord],
    query_root: Union[str, Path],
    manifest: DatasetManifest,
    skip: Sequence[str] = (),
) -> Dict[str, np.ndarray]:
    """Query crops are rescaled by their source frame's resize factor before embedding."""
    root = Path(query_root)
    skipped = set(skip)
    out = {}
    for query in queries:
        path = root / query.crop_path
        if str(path) in skipped:
            continue
        crop = read_frame(path)
        sx, sy = _query_scale(query, manifest, model.config.image_size)
        h, w = crop.shape[-2:]
        target = (max(1, round(h * sy)), max(1, round(w * sx)))
        if target != (h, w):
            crop = F.interpolate(crop.unsqueeze(0), size=target, mode="bilinear", align_corners=False)[0]
        out[query.query_id] = model.encode_query(crop).vector.double().cpu().numpy()
    return out


def find_missing(
    queries: Sequence[QueryRecord], manifest: DatasetManifest, image_root: Path, query_root: Path
) -> List[str]:
    missing = [str(image_root / f.image_path) for f in manifest.frames if not (image_root / f.image_path).exists()]
    missing += [str(query_root / q.crop_path) for q in queries if not (query_root / q.crop_path).exists()]
    return missing


def run_search(
    checkpoint: Union[str, Path],
    queries: Sequence[QueryRecord],
    gallery_manifest: DatasetManifest,
    image_root: Union[str, Path],
    query_root: Union[str, Path],
    eval_config: Optional[EvalConfig] = None,
    skip_missing: bool = False,
    device: str = "cpu",
    model: Optional[VehicleSearchNet] = None,
) -> SearchRun:
    eval_config = eval_config or EvalConfig()
    if not gallery_manifest.frames:
        raise ReportError("empty gallery")
    image_root, query_root = Path(image_root), Path(query_root)
    missing = find_missing(queries, gallery_manifest, image_root, query_root)
    if missing and not skip_missing:
        raise MissingImagesError(missing)
    if missing:
        logger.warning(f"skipping {len(missing)} missing images")

    model = model if model is not None else load_search_model(checkpoint, device)
    model.eval()
    gallery = encode_gallery(model, gallery_manifest, image_root, skip=missing)
    embeddings = encode_queries(model, queries, query_root, gallery_manifest, skip=missing)
    encoded = [EncodedQuery(q, embeddings[q.query_id]) for q in queries if q.query_id in embeddings]
    if not encoded:
        raise ReportError("empty query set")
    ranked = rank_queries(encoded, gallery, gallery_manifest, eval_config)
    report = summarize(ranked, [q.record for q in encoded], gallery_manifest, eval_config.per_weather)
    logger.info(f"Search over {len(encoded)} queries: mAP={report.mAP:.4f} top1={report.top1:.4f}")
    return SearchRun(ranked, report, gallery, embeddings, missing)
