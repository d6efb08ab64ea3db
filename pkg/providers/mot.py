"""Shared reader for MOT-style `gt.txt` files (frame,id,left,top,width,height,...)."""

import csv
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from torchvision.io import read_image

from datamodel.boxes import clip_box, is_valid_box
from providers.tracking import SourceFormatError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


class MotRow:
    __slots__ = ("frame", "track_id", "box", "extra")

    def __init__(self, frame: int, track_id: int, box: Tuple[float, float, float, float], extra: List[str]):
        self.frame = frame
        self.track_id = track_id
        self.box = box
        self.extra = extra


def read_gt(path: Path) -> Dict[int, List[MotRow]]:
    """Rows grouped by frame index; boxes converted to corner form."""
    rows: Dict[int, List[MotRow]] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as f:
        for line_no, fields in enumerate(csv.reader(f), start=1):
            if not fields or not "".join(fields).strip():
                continue
            if len(fields) < 6:
                raise SourceFormatError(f"{path}:{line_no}: expected at least 6 columns, got {len(fields)}")
            try:
                frame, track_id = int(float(fields[0])), int(float(fields[1]))
                left, top, width, height = (float(v) for v in fields[2:6])
            except ValueError as e:
                raise SourceFormatError(f"{path}:{line_no}: {e}") from e
            rows[frame].append(MotRow(frame, track_id, (left, top, left + width, top + height), fields[6:]))
    return rows


def image_size(path: Path) -> Tuple[int, int]:
    """(width, height) of an image file."""
    image = read_image(str(path))
    return int(image.shape[-1]), int(image.shape[-2])


def list_frame_images(directory: Path) -> Dict[int, Path]:
    """Frame index -> image for a directory of numbered images (000001.jpg ...)."""
    if not directory.is_dir():
        return {}
    frames = {}
    for p in directory.iterdir():
        if p.suffix.lower() in IMAGE_SUFFIXES and p.stem.isdigit():
            frames[int(p.stem)] = p
    return dict(sorted(frames.items()))


def fit_box(box, width: int, height: int) -> Optional[Tuple[float, float, float, float]]:
    """Clip to the frame; None when nothing is left."""
    clipped = clip_box(box, width, height)
    return clipped if is_valid_box(clipped) else None
