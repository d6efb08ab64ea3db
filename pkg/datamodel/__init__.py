"""Records, box geometry and the line-delimited manifest codec shared by every package."""

from datamodel.boxes import Box, clip_box, is_valid_box, iou
from datamodel.errors import ContractError, IntegrityError, ManifestParseError
from datamodel.manifest import (
    SCHEMA_VERSION,
    load_manifest,
    load_queries,
    validate_split_pair,
    write_manifest,
    write_queries,
)
from datamodel.records import (
    UNLABELED,
    BoxAnnotation,
    DatasetManifest,
    FrameRecord,
    QueryRecord,
    VehicleAttributes,
    Weather,
)

__all__ = [
    "Box",
    "BoxAnnotation",
    "ContractError",
    "DatasetManifest",
    "FrameRecord",
    "IntegrityError",
    "ManifestParseError",
    "QueryRecord",
    "SCHEMA_VERSION",
    "UNLABELED",
    "VehicleAttributes",
    "Weather",
    "clip_box",
    "iou",
    "is_valid_box",
    "load_manifest",
    "load_queries",
    "validate_split_pair",
    "write_manifest",
    "write_queries",
]
