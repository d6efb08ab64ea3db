"""
Synthetic multi-camera scenes for offline runs: small frames with solid
colored rectangles as vehicles moving along straight lines.

Vehicle identities are shared across the cameras of a scene. Each vehicle
keeps its color and aspect in every camera, so a model can learn to
re-identify them. The generator writes PNG frames plus a generic
`source.jsonl` and returns the TrackingSource.
"""

import logging
import random
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field
from torchvision.io import write_png

from datamodel.records import Weather
from providers.generic_tracking import SOURCE_FILE, load_source as load_generic, write_source
from providers.tracking import (
    ObjectClass,
    SourceCamera,
    SourceFrame,
    SourceScene,
    Track,
    TrackingSource,
)

logger = logging.getLogger(__name__)

# saturated and well separated so color alone identifies a vehicle
PALETTE: Tuple[Tuple[int, int, int], ...] = (
    (220, 40, 40),
    (40, 200, 60),
    (40, 80, 230),
    (240, 210, 30),
    (200, 50, 210),
    (30, 210, 220),
    (250, 140, 20),
    (140, 90, 40),
    (250, 250, 250),
    (20, 20, 20),
    (120, 200, 140),
    (150, 120, 230),
)
PEDESTRIAN_COLOR = (128, 128, 128)
MIN_VISIBLE_SIDE = 4


class ToySceneSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_scenes: int = Field(2, ge=1)
    cameras_per_scene: int = Field(2, ge=1)
    frames_per_camera: int = Field(25, ge=1)
    vehicles_per_scene: int = Field(4, ge=1)
    single_camera_vehicles: int = Field(1, ge=0)
    pedestrians_per_camera: int = Field(1, ge=0)
    frame_size: int = Field(64, ge=16)
    weathers: Sequence[Weather] = (Weather.DAY, Weather.NIGHT)
    seed: int = 0


def _trajectory(rng: random.Random, size: int, frames: int):
    w = rng.randint(size // 6, size // 3)
    h = rng.randint(size // 8, size // 4)
    x0, y0 = rng.uniform(-w / 2, size - w / 2), rng.uniform(0, size - h)
    vx, vy = rng.uniform(-1.5, 1.5), rng.uniform(-0.5, 0.5)
    start = rng.randint(0, frames // 3)
    end = rng.randint(start + frames // 3, frames)
    return w, h, x0, y0, vx, vy, start, end


def _box_at(traj, index: int, size: int) -> Optional[Tuple[float, float, float, float]]:
    w, h, x0, y0, vx, vy, start, end = traj
    if not start <= index < end:
        return None
    t = index - start
    x1 = max(0.0, round(x0 + vx * t))
    y1 = max(0.0, round(y0 + vy * t))
    x2 = min(float(size), round(x0 + vx * t + w))
    y2 = min(float(size), round(y0 + vy * t + h))
    if x2 - x1 < MIN_VISIBLE_SIDE or y2 - y1 < MIN_VISIBLE_SIDE:
        return None
    return (float(x1), float(y1), float(x2), float(y2))


def _render(size: int, boxes: List[Tuple[Tuple[float, ...], Tuple[int, int, int]]], generator: torch.Generator) -> torch.Tensor:
    image = torch.randint(70, 110, (3, size, size), generator=generator, dtype=torch.uint8)
    for box, color in boxes:
        x1, y1, x2, y2 = (int(v) for v in box)
        image[:, y1:y2, x1:x2] = torch.tensor(color, dtype=torch.uint8).view(3, 1, 1)
    return image


def generate_toy_source(root: Path, spec: Optional[ToySceneSpec] = None, name: str = "toy") -> TrackingSource:
    spec = spec or ToySceneSpec()
    root = Path(root)
    rng = random.Random(spec.seed)
    generator = torch.Generator().manual_seed(spec.seed)
    size = spec.frame_size
    next_track = 1
    scenes = []
    for s in range(spec.num_scenes):
        scene_id = f"scene{s:02d}"
        weather = Weather(spec.weathers[s % len(spec.weathers)])
        shared = [(next_track + v, PALETTE[(next_track + v - 1) % len(PALETTE)]) for v in range(spec.vehicles_per_scene)]
        next_track += spec.vehicles_per_scene
        cameras = []
        for c in range(spec.cameras_per_scene):
            camera_id = f"c{c:03d}"
            actors = [(tid, color, ObjectClass.VEHICLE) for tid, color in shared]
            if c == 0:
                for _ in range(spec.single_camera_vehicles):
                    actors.append((next_track, PALETTE[(next_track - 1) % len(PALETTE)], ObjectClass.VEHICLE))
                    next_track += 1
            for _ in range(spec.pedestrians_per_camera):
                actors.append((next_track, PEDESTRIAN_COLOR, ObjectClass.PEDESTRIAN))
                next_track += 1
            trajectories = [(tid, color, cls, _trajectory(rng, size, spec.frames_per_camera)) for tid, color, cls in actors]

            frames = []
            for index in range(spec.frames_per_camera):
                tracks, drawn = [], []
                for tid, color, cls, traj in trajectories:
                    box = _box_at(traj, index, size)
                    if box is None:
                        continue
                    tracks.append(Track(track_id=tid, box=box, object_class=cls, weather=weather))
                    drawn.append((box, color))
                rel = Path(scene_id) / camera_id / "img1" / f"{index:06d}.png"
                (root / rel).parent.mkdir(parents=True, exist_ok=True)
                write_png(_render(size, drawn, generator), str(root / rel))
                frames.append(SourceFrame(frame_index=index, image_path=str(rel), width=size, height=size, tracks=tracks))
            cameras.append(SourceCamera(camera_id=camera_id, frames=frames))
        scenes.append(SourceScene(scene_id=scene_id, weather=weather, cameras=cameras))

    source = TrackingSource(name=name, root=str(root), scenes=scenes)
    write_source(source, root / SOURCE_FILE)
    logger.info(f"Generated toy source at {root}: {spec.num_scenes} scenes x {spec.cameras_per_scene} cameras")
    return source


def load_source(root: Path, name: Optional[str] = None) -> TrackingSource:
    """Read a previously generated toy source, generating the default one if absent."""
    root = Path(root)
    if (root / SOURCE_FILE).exists():
        return load_generic(root, name=name)
    return generate_toy_source(root, name=name or "toy")
