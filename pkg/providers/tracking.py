"""
In-memory shape of a multi-camera tracking dataset, as the dataset
builder consumes it. Adapters in this package turn on-disk layouts into
a TrackingSource.
"""

from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from datamodel.boxes import is_valid_box
from datamodel.records import Weather


class ObjectClass(str, Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"


class _Source(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Track(_Source):
    track_id: int = Field(ge=0)
    box: Tuple[float, float, float, float]
    object_class: ObjectClass = ObjectClass.VEHICLE
    weather: Optional[Weather] = None

    @field_validator("box")
    @classmethod
    def _valid_box(cls, box):
        if not is_valid_box(box):
            raise ValueError(f"degenerate box {box}")
        return box


class SourceFrame(_Source):
    frame_index: int = Field(ge=0)
    image_path: str
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    tracks: List[Track] = Field(default_factory=list)


class SourceCamera(_Source):
    camera_id: str
    frames: List[SourceFrame]

    @model_validator(mode="after")
    def _frames_increasing(self):
        indices = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError(f"camera {self.camera_id}: frame indices must be strictly increasing")
        return self


class SourceScene(_Source):
    scene_id: str
    weather: Weather = Weather.UNKNOWN
    cameras: List[SourceCamera]


class TrackingSource(_Source):
    name: str
    root: str
    scenes: List[SourceScene]

    def scene(self, scene_id: str) -> SourceScene:
        for scene in self.scenes:
            if scene.scene_id == scene_id:
                return scene
        raise KeyError(scene_id)


class SourceFormatError(ValueError):
    """Raised when an on-disk tracking layout cannot be parsed."""
    pass


def load_tracking_source(kind: str, root: Union[str, Path], name: Optional[str] = None) -> TrackingSource:
    """Dispatch to the adapter for `kind`: cityflow, synthehicle, generic or toy."""
    from providers import cityflow, generic_tracking, synthehicle, toy_scenes

    loaders = {
        "cityflow": cityflow.load_source,
        "synthehicle": synthehicle.load_source,
        "generic": generic_tracking.load_source,
        "toy": toy_scenes.load_source,
    }
    if kind not in loaders:
        raise SourceFormatError(f"unknown tracking source kind '{kind}' (expected one of {sorted(loaders)})")
    return loaders[kind](Path(root), name=name)
