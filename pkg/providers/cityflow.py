"""
CityFlowV2-style layout:

    <root>/[train|validation|test/]S01/c001/gt/gt.txt
    <root>/.../S01/c001/img1/000001.jpg   (frames extracted from vdo.avi)

Every extracted frame becomes a source frame, including frames without
annotations. Without an img1/ directory only annotated frames are known
and their image paths point at where extraction would write them.
"""

import logging
from pathlib import Path
from typing import Optional

from datamodel.records import Weather
from providers.mot import fit_box, image_size, list_frame_images, read_gt
from providers.tracking import (
    ObjectClass,
    SourceCamera,
    SourceFormatError,
    SourceFrame,
    SourceScene,
    Track,
    TrackingSource,
)

logger = logging.getLogger(__name__)


def _camera_size(camera_dir: Path, images) -> tuple:
    roi = camera_dir / "roi.jpg"
    if roi.exists():
        return image_size(roi)
    if images:
        return image_size(next(iter(images.values())))
    raise SourceFormatError(f"{camera_dir}: no roi.jpg or extracted frames to read the frame size from")


def load_camera(camera_dir: Path, root: Path) -> SourceCamera:
    rows = read_gt(camera_dir / "gt" / "gt.txt")
    images = list_frame_images(camera_dir / "img1")
    width, height = _camera_size(camera_dir, images)
    indices = sorted(set(images) | set(rows))
    frames = []
    dropped = 0
    for index in indices:
        path = images.get(index, camera_dir / "img1" / f"{index:06d}.jpg")
        tracks = []
        for row in rows.get(index, []):
            box = fit_box(row.box, width, height)
            if box is None:
                dropped += 1
                continue
            tracks.append(Track(track_id=row.track_id, box=box, object_class=ObjectClass.VEHICLE))
        frames.append(
            SourceFrame(
                frame_index=index,
                image_path=str(path.relative_to(root)),
                width=width,
                height=height,
                tracks=tracks,
            )
        )
    if dropped:
        logger.warning(f"{camera_dir}: dropped {dropped} boxes lying outside the frame")
    return SourceCamera(camera_id=camera_dir.name, frames=frames)


def load_source(root: Path, name: Optional[str] = None) -> TrackingSource:
    root = Path(root)
    gt_files = sorted(root.rglob("gt/gt.txt"))
    if not gt_files:
        raise SourceFormatError(f"no */gt/gt.txt files under {root}")
    scenes = {}
    for gt in gt_files:
        camera_dir = gt.parent.parent
        scene_id = camera_dir.parent.name
        scenes.setdefault(scene_id, []).append(load_camera(camera_dir, root))
    logger.info(f"Loaded CityFlow layout from {root}: {len(scenes)} scenes, {len(gt_files)} cameras")
    return TrackingSource(
        name=name or root.name,
        root=str(root),
        scenes=[
            SourceScene(scene_id=scene_id, weather=Weather.DAY, cameras=cameras)
            for scene_id, cameras in sorted(scenes.items())
        ],
    )
