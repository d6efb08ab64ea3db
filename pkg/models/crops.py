import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Tuple, Union

import torch
import torch.nn.functional as F
from torch import Tensor
from torchvision.io import ImageReadMode, read_image
from torchvision.ops import roi_align

from datamodel.records import DatasetManifest

logger = logging.getLogger(__name__)


def crop_regions(images: Tensor, boxes: List[Tensor], size: Tuple[int, int]) -> Tensor:
    """Resample each box of each frame to a fixed-size crop: [m, 3, size[0], size[1]]."""
    total = sum(len(b) for b in boxes)
    if total == 0:
        return images.new_zeros((0, images.shape[1], *size))
    return roi_align(
        images,
        [b.to(images) for b in boxes],
        output_size=size,
        spatial_scale=1.0,
        sampling_ratio=2,
        aligned=True,
    )


def cut_box(image: Tensor, box) -> Tensor:
    """Exact pixel crop of a [3, H, W] image, no margin, at least one pixel each side."""
    _, height, width = image.shape
    x1 = int(max(0, min(width - 1, math.floor(box[0]))))
    y1 = int(max(0, min(height - 1, math.floor(box[1]))))
    x2 = int(max(x1 + 1, min(width, math.ceil(box[2]))))
    y2 = int(max(y1 + 1, min(height, math.ceil(box[3]))))
    return image[:, y1:y2, x1:x2]


def read_frame(path: Union[str, Path]) -> Tensor:
    """RGB frame as float [3, H, W] in [0, 1]."""
    return read_image(str(path), ImageReadMode.RGB).float() / 255.0


def collect_identity_crops(
    manifest: DatasetManifest,
    image_root: Union[str, Path],
    size: Tuple[int, int],
) -> Tuple[Dict[int, Tensor], List[str]]:
    """
    Cut every labeled ground-truth box out of its frame and resize it.

    Returns ({identity: [k, 3, size[0], size[1]]}, missing image paths).
    Frames whose image cannot be read are skipped and reported.
    """
    root = Path(image_root)
    crops: Dict[int, List[Tensor]] = defaultdict(list)
    missing: List[str] = []
    for frame in manifest.frames:
        path = root / frame.image_path
        if not path.exists():
            missing.append(str(path))
            continue
        image = read_frame(path)
        for ann in frame.annotations:
            if not ann.labeled:
                continue
            crop = cut_box(image, ann.box).unsqueeze(0)
            crops[ann.identity].append(F.interpolate(crop, size=size, mode="bilinear", align_corners=False))
    if missing:
        logger.warning(f"{len(missing)} frame images missing under {root}")
    return {identity: torch.cat(items) for identity, items in sorted(crops.items())}, missing
