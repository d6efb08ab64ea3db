"""
Synthehicle-style layout:

    <root>/<Town>-<variant>-<weather>/<camera>/gt/gt.txt
    <root>/<Town>-<variant>-<weather>/<camera>/img1/000001.jpg

gt.txt rows are `frame,id,left,top,width,height,conf,class[,...]`. The
class column is a CARLA semantic label, by name or number; pedestrians
are kept and tagged so the builder can drop them. Weather comes from the
last dash-separated part of the scene name.
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

# CARLA semantic tag 4 is "Pedestrian"
PEDESTRIAN_CLASSES = {"4", "pedestrian", "walker", "person"}


def scene_weather(scene_id: str) -> Weather:
    suffix = scene_id.rsplit("-", 1)[-1].lower()
    try:
        return Weather(suffix)
    except ValueError:
        return Weather.UNKNOWN


def _object_class(extra) -> ObjectClass:
    if len(extra) >= 2:
        label = extra[1].strip().lower()
        if label.endswith(".0"):
            label = label[:-2]
        if label in PEDESTRIAN_CLASSES:
            return ObjectClass.PEDESTRIAN
    return ObjectClass.VEHICLE


def load_camera(camera_dir: Path, root: Path, weather: Weather) -> SourceCamera:
    rows = read_gt(camera_dir / "gt" / "gt.txt")
    images = list_frame_images(camera_dir / "img1")
    if not images:
        raise SourceFormatError(f"{camera_dir}: no frames under img1/")
    width, height = image_size(next(iter(images.values())))
    frames = []
    for index, path in images.items():
        tracks = []
        for row in rows.get(index, []):
            box = fit_box(row.box, width, height)
            if box is None:
                continue
            tracks.append(
                Track(track_id=row.track_id, box=box, object_class=_object_class(row.extra), weather=weather)
            )
        frames.append(
            SourceFrame(
                frame_index=index,
                image_path=str(path.relative_to(root)),
                width=width,
                height=height,
                tracks=tracks,
            )
        )
    return SourceCamera(camera_id=camera_dir.name, frames=frames)


def load_source(root: Path, name: Optional[str] = None) -> TrackingSource:
    root = Path(root)
    scenes = []
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        camera_dirs = sorted(p for p in scene_dir.iterdir() if (p / "gt" / "gt.txt").exists())
        if not camera_dirs:
            continue
        weather = scene_weather(scene_dir.name)
        cameras = [load_camera(c, root, weather) for c in camera_dirs]
        scenes.append(SourceScene(scene_id=scene_dir.name, weather=weather, cameras=cameras))
    if not scenes:
        raise SourceFormatError(f"no <scene>/<camera>/gt/gt.txt under {root}")
    logger.info(f"Loaded Synthehicle layout from {root}: {len(scenes)} scenes")
    return TrackingSource(name=name or root.name, root=str(root), scenes=scenes)
