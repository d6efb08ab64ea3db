"""
Dataset records.

A manifest is a list of frames; each frame carries the vehicle boxes
annotated in it. Identities are contiguous integers 1..C inside one
manifest, with UNLABELED (0) for vehicles that were detected but never
identified. Every record is immutable once validated.
"""

from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from datamodel.boxes import is_valid_box

UNLABELED = 0


class Weather(str, Enum):
    DAY = "day"
    DAWN = "dawn"
    RAIN = "rain"
    NIGHT = "night"
    UNKNOWN = "unknown"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class _Record(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class VehicleAttributes(_Record):
    color: Optional[str] = None
    vtype: Optional[str] = None


class BoxAnnotation(_Record):
    box: Tuple[float, float, float, float]
    identity: int = UNLABELED
    camera_id: str
    attributes: Optional[VehicleAttributes] = None

    @field_validator("box")
    @classmethod
    def _box_is_valid(cls, box):
        if not is_valid_box(box):
            raise ValueError(f"invalid box {box}: need x1 < x2 and y1 < y2")
        return box

    @field_validator("identity")
    @classmethod
    def _identity_non_negative(cls, identity):
        if identity < UNLABELED:
            raise ValueError(f"identity {identity} must be UNLABELED (0) or positive")
        return identity

    @property
    def labeled(self) -> bool:
        return self.identity != UNLABELED


class FrameRecord(_Record):
    frame_id: str
    image_path: str
    scene_id: str
    camera_id: str
    width: int
    height: int
    weather_tag: Weather = Weather.UNKNOWN
    annotations: List[BoxAnnotation]

    @model_validator(mode="after")
    def _boxes_inside_frame(self):
        if not self.annotations:
            raise ValueError(f"frame {self.frame_id} has no annotations")
        for ann in self.annotations:
            x1, y1, x2, y2 = ann.box
            if x1 < 0 or y1 < 0 or x2 > self.width or y2 > self.height:
                raise ValueError(
                    f"box {ann.box} of frame {self.frame_id} lies outside {self.width}x{self.height}"
                )
        return self

    def identities(self) -> List[int]:
        return sorted({a.identity for a in self.annotations if a.labeled})


class DatasetManifest(_Record):
    name: str
    split: Split
    frames: List[FrameRecord]
    num_identities: int
    # raw source id -> contiguous 1..C
    identity_remap: Dict[str, int]

    @model_validator(mode="after")
    def _identities_consistent(self):
        seen_ids = set()
        seen = set()
        for frame in self.frames:
            if frame.frame_id in seen:
                raise ValueError(f"duplicate frame_id {frame.frame_id}")
            seen.add(frame.frame_id)
            seen_ids.update(frame.identities())
        if len(seen_ids) != self.num_identities:
            raise ValueError(
                f"num_identities={self.num_identities} but frames carry {len(seen_ids)} distinct identities"
            )
        if seen_ids and (min(seen_ids) < 1 or max(seen_ids) > self.num_identities):
            raise ValueError(f"identities must be contiguous in 1..{self.num_identities}")
        if set(self.identity_remap.values()) != seen_ids:
            raise ValueError("identity_remap values do not match the identities present in frames")
        return self

    def frame_index(self) -> Dict[str, FrameRecord]:
        return {f.frame_id: f for f in self.frames}

    @property
    def num_boxes(self) -> int:
        return sum(len(f.annotations) for f in self.frames)


class QueryRecord(_Record):
    query_id: str
    source_frame_id: str
    box: BoxAnnotation
    crop_path: str

    @field_validator("box")
    @classmethod
    def _box_labeled(cls, box):
        if not box.labeled:
            raise ValueError("query box must carry an identity")
        return box
