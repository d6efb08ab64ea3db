"""
Generic line-delimited tracking schema (see schema/tracking_source.md):

    line 1: {"kind": "tracking_source", "schema_version": 1, "name": ...}
    then one line per frame:
    {"scene_id", "camera_id", "frame_index", "image_path", "width", "height",
     "weather"?, "tracks": [{"track_id", "box", "object_class"?, "weather"?}]}

Image paths are relative to the directory holding the file.
"""

import logging
from collections import defaultdict
from pathlib import Path
from typing import Optional

import orjson
from pydantic import ValidationError

from datamodel.records import Weather
from providers.tracking import (
    SourceCamera,
    SourceFormatError,
    SourceFrame,
    SourceScene,
    TrackingSource,
)

logger = logging.getLogger(__name__)

SOURCE_FILE = "source.jsonl"
SCHEMA_VERSION = 1


def _dumps(obj) -> bytes:
    return orjson.dumps(obj, option=orjson.OPT_SORT_KEYS) + b"\n"


def load_source(root: Path, name: Optional[str] = None) -> TrackingSource:
    root = Path(root)
    path = root / SOURCE_FILE if root.is_dir() else root
    if not path.exists():
        raise SourceFormatError(f"tracking source file not found: {path}")
    lines = [line for line in path.read_bytes().splitlines() if line.strip()]
    if not lines:
        raise SourceFormatError(f"{path} is empty")
    header = orjson.loads(lines[0])
    if header.get("kind") != "tracking_source" or header.get("schema_version") != SCHEMA_VERSION:
        raise SourceFormatError(f"{path}:1: expected a tracking_source header with schema_version {SCHEMA_VERSION}")

    cameras = defaultdict(list)
    weather = {}
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            record = orjson.loads(line)
            scene_id, camera_id = record.pop("scene_id"), record.pop("camera_id")
            tag = record.pop("weather", None)
            cameras[(scene_id, camera_id)].append(SourceFrame.model_validate(record))
        except (orjson.JSONDecodeError, KeyError, ValidationError) as e:
            raise SourceFormatError(f"{path}:{line_no}: {e}") from e
        if tag is not None:
            weather[scene_id] = Weather(tag)

    scenes = defaultdict(list)
    for (scene_id, camera_id), frames in sorted(cameras.items()):
        frames.sort(key=lambda f: f.frame_index)
        try:
            scenes[scene_id].append(SourceCamera(camera_id=camera_id, frames=frames))
        except ValidationError as e:
            raise SourceFormatError(f"{path}: {e}") from e
    return TrackingSource(
        name=name or header.get("name") or path.parent.name,
        root=str(path.parent),
        scenes=[
            SourceScene(scene_id=s, weather=weather.get(s, Weather.UNKNOWN), cameras=c)
            for s, c in sorted(scenes.items())
        ],
    )


def write_source(source: TrackingSource, path: Path) -> Path:
    """Write a source in the generic schema; image paths are written as stored."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_dumps({"kind": "tracking_source", "schema_version": SCHEMA_VERSION, "name": source.name}))
        for scene in source.scenes:
            for camera in scene.cameras:
                for frame in camera.frames:
                    record = frame.model_dump(mode="json")
                    record.update(scene_id=scene.scene_id, camera_id=camera.camera_id, weather=scene.weather.value)
                    f.write(_dumps(record))
    return path
