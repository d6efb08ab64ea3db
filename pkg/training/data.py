"""Frame dataset and loader for stage-2 training."""

import logging
import random
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import orjson
import torch
import torch.nn.functional as F
from torch import Tensor
from torch.utils.data import DataLoader, Dataset

from datamodel.records import DatasetManifest
from models.crops import read_frame
from models.search_net import FrameTargets

logger = logging.getLogger(__name__)


class MissingImagesError(FileNotFoundError):
    """Raised when frame or crop images are missing; `paths` lists them."""

    def __init__(self, paths: List[str]):
        self.paths = paths
        shown = ", ".join(paths[:5]) + (" ..." if len(paths) > 5 else "")
        super().__init__(f"{len(paths)} images missing: {shown}")


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False


def resolve_image_root(build_dir: Union[str, Path], image_root: Optional[str] = None) -> Path:
    """Explicit root, else the one recorded in the build's stats.json, else the build dir."""
    if image_root:
        return Path(image_root)
    stats = Path(build_dir) / "stats.json"
    if stats.exists():
        recorded = orjson.loads(stats.read_bytes()).get("image_root")
        if recorded:
            return Path(recorded)
    return Path(build_dir)


def missing_images(manifest: DatasetManifest, image_root: Union[str, Path]) -> List[str]:
    root = Path(image_root)
    return [str(root / f.image_path) for f in manifest.frames if not (root / f.image_path).exists()]


def resize_frame(image: Tensor, size: Tuple[int, int]) -> Tuple[Tensor, float, float]:
    """Resize [3, H, W] to `size`; returns (image, x scale, y scale)."""
    height, width = image.shape[-2:]
    if (height, width) == tuple(size):
        return image, 1.0, 1.0
    resized = F.interpolate(image.unsqueeze(0), size=tuple(size), mode="bilinear", align_corners=False)[0]
    return resized, size[1] / width, size[0] / height


class FrameDataset(Dataset):
    """Frames of a manifest, resized to the training size, with their boxes and identities."""

    def __init__(self, manifest: DatasetManifest, image_root: Union[str, Path], image_size: Tuple[int, int]):
        self.manifest = manifest
        self.image_root = Path(image_root)
        self.image_size = tuple(image_size)

    def __len__(self) -> int:
        return len(self.manifest.frames)

    def __getitem__(self, index: int):
        frame = self.manifest.frames[index]
        image, sx, sy = resize_frame(read_frame(self.image_root / frame.image_path), self.image_size)
        scale = torch.tensor([sx, sy, sx, sy])
        boxes = torch.tensor([a.box for a in frame.annotations], dtype=torch.float32) * scale
        identities = torch.tensor([a.identity for a in frame.annotations], dtype=torch.long)
        return image, FrameTargets(boxes=boxes, identities=identities), frame.frame_id


def collate_frames(batch):
    images, targets, frame_ids = zip(*batch)
    return torch.stack(images), list(targets), list(frame_ids)


def epoch_batches(num_frames: int, batch_size: int, seed: int, epoch: int) -> List[List[int]]:
    """Shuffled batches of frame indices; the order depends only on (seed, epoch)."""
    generator = torch.Generator().manual_seed(seed * 100_003 + epoch)
    order = torch.randperm(num_frames, generator=generator)
    return [chunk.tolist() for chunk in order.split(batch_size)]


def frame_loader(dataset: FrameDataset, batches: List[List[int]], seed: int = 0, num_workers: int = 0) -> DataLoader:
    # an explicit generator keeps worker seeding off the global RNG
    return DataLoader(
        dataset,
        batch_sampler=batches,
        num_workers=num_workers,
        collate_fn=collate_frames,
        generator=torch.Generator().manual_seed(seed),
    )
