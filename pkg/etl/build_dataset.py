#!/usr/bin/env python3
"""
Vehicle search dataset builder

Turns a multi-camera tracking source into train/test manifests plus a
query list:
  drop pedestrians -> weather filter -> keep every stride-th frame per
  camera -> split by scene -> drop single-camera and cross-split
  identities -> drop frames left empty -> remap identities to 1..C ->
  pick one query per (identity, camera) in the test split
"""

import argparse
import logging
import os
import random
import sys
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import orjson
import torch
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from torchvision.io import write_png

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dotenv import load_dotenv

from datamodel.manifest import write_manifest, write_queries
from datamodel.records import (
    BoxAnnotation,
    DatasetManifest,
    FrameRecord,
    QueryRecord,
    Split,
    Weather,
)
from models.crops import cut_box, read_frame
from providers.tracking import ObjectClass, TrackingSource, load_tracking_source

logger = logging.getLogger(__name__)


class BuildSpecError(Exception):
    """Raised for an inconsistent build specification."""
    pass


class BuildError(RuntimeError):
    """Raised when a build produces an unusable split."""
    pass


class BuildSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "vehicle_search"
    sample_stride: int = Field(5, ge=1)
    # a scene is selected by its exact id or by a prefix followed by '-'
    train_scenes: List[str]
    test_scenes: List[str]
    drop_pedestrians: bool = True
    drop_single_camera_ids: bool = True
    weather_filter: Optional[Set[Weather]] = None
    seed: int = 0

    @model_validator(mode="after")
    def _disjoint_scenes(self):
        shared = set(self.train_scenes) & set(self.test_scenes)
        if shared:
            raise BuildSpecError(f"scenes listed in both splits: {sorted(shared)}")
        return self

    @classmethod
    def load(cls, path: Path) -> "BuildSpec":
        import yaml

        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            raise BuildSpecError(f"{path}: {e}") from e


@dataclass
class BuildOutputs:
    train: DatasetManifest
    test: DatasetManifest
    queries: List[QueryRecord]
    image_root: str
    stats: Dict[str, int] = field(default_factory=dict)


def _scene_matches(scene_id: str, selectors: List[str]) -> bool:
    return any(scene_id == s or scene_id.startswith(s + "-") for s in selectors)


def dataset_stats(manifest: DatasetManifest, queries: Optional[List[QueryRecord]] = None) -> Dict[str, int]:
    """# identities, # frames, # boxes, # queries."""
    identities = set()
    for frame in manifest.frames:
        identities.update(frame.identities())
    return {
        "identities": len(identities),
        "frames": len(manifest.frames),
        "boxes": manifest.num_boxes,
        "queries": len(queries or []),
    }


class DatasetBuilder:
    def __init__(self, spec: BuildSpec):
        self.spec = spec
        self.stats = defaultdict(int)

    def _resolve_scenes(self, source: TrackingSource, selectors: List[str]) -> Set[str]:
        matched = {scene.scene_id for scene in source.scenes if _scene_matches(scene.scene_id, selectors)}
        for selector in selectors:
            if not any(_scene_matches(s, [selector]) for s in matched):
                logger.warning(f"scene selector '{selector}' matched no scene in {source.name}")
        return matched

    # frames as (scene_id, camera_id, frame_index, image_path, width, height, weather, [(raw_id, box)])
    def _sample(self, source: TrackingSource, scene_ids: Set[str]) -> List[tuple]:
        frames = []
        for scene in source.scenes:
            if scene.scene_id not in scene_ids:
                continue
            for camera in scene.cameras:
                for frame in camera.frames:
                    self.stats["source_frames"] += 1
                    if frame.frame_index % self.spec.sample_stride != 0:
                        continue
                    self.stats["sampled_frames"] += 1
                    weather = scene.weather
                    boxes = []
                    for track in frame.tracks:
                        if track.weather is not None:
                            weather = track.weather
                        if self.spec.drop_pedestrians and track.object_class == ObjectClass.PEDESTRIAN:
                            self.stats["pedestrian_boxes_dropped"] += 1
                            continue
                        boxes.append((str(track.track_id), track.box))
                    if self.spec.weather_filter is not None and weather not in self.spec.weather_filter:
                        self.stats["weather_filtered_frames"] += 1
                        continue
                    frames.append(
                        (scene.scene_id, camera.camera_id, frame.frame_index, frame.image_path,
                         frame.width, frame.height, weather, boxes)
                    )
        frames.sort(key=lambda f: (f[0], f[1], f[2]))
        return frames

    def _multi_camera_ids(self, frames: List[tuple]) -> Set[str]:
        cameras = defaultdict(set)
        for scene_id, camera_id, *_rest, boxes in frames:
            for raw_id, _ in boxes:
                cameras[raw_id].add((scene_id, camera_id))
        return {raw_id for raw_id, cams in cameras.items() if len(cams) >= 2}

    def _manifest(self, frames: List[tuple], keep: Set[str], split: Split) -> DatasetManifest:
        remap = {raw_id: i for i, raw_id in enumerate(sorted(keep, key=_id_sort_key), start=1)}
        records = []
        for scene_id, camera_id, index, image_path, width, height, weather, boxes in frames:
            # camera names repeat across scenes
            camera = f"{scene_id}/{camera_id}"
            annotations = [
                BoxAnnotation(box=box, identity=remap[raw_id], camera_id=camera)
                for raw_id, box in boxes
                if raw_id in keep
            ]
            if not annotations:
                self.stats[f"{split.value}_empty_frames_dropped"] += 1
                continue
            records.append(
                FrameRecord(
                    frame_id=f"{scene_id}_{camera_id}_{index:06d}",
                    image_path=image_path,
                    scene_id=scene_id,
                    camera_id=camera,
                    width=width,
                    height=height,
                    weather_tag=weather,
                    annotations=annotations,
                )
            )
        if not records:
            raise BuildError(f"{split.value} split is empty after filtering")
        return DatasetManifest(
            name=self.spec.name,
            split=split,
            frames=records,
            num_identities=len(remap),
            identity_remap=remap,
        )

    def _queries(self, test: DatasetManifest) -> List[QueryRecord]:
        rng = random.Random(self.spec.seed)
        candidates = defaultdict(list)
        for frame in test.frames:
            for ann in frame.annotations:
                candidates[(ann.identity, frame.camera_id)].append((frame.frame_id, ann))
        queries = []
        for (identity, camera_id), items in sorted(candidates.items()):
            frame_id, ann = items[rng.randrange(len(items))]
            query_id = f"q{identity:05d}_{camera_id.replace('/', '_')}"
            queries.append(
                QueryRecord(query_id=query_id, source_frame_id=frame_id, box=ann, crop_path=f"queries/{query_id}.png")
            )
        return queries

    def build(self, source: TrackingSource) -> BuildOutputs:
        train_scenes = self._resolve_scenes(source, self.spec.train_scenes)
        test_scenes = self._resolve_scenes(source, self.spec.test_scenes)
        overlap = train_scenes & test_scenes
        if overlap:
            raise BuildSpecError(f"scenes selected by both splits: {sorted(overlap)}")
        train_frames = self._sample(source, train_scenes)
        test_frames = self._sample(source, test_scenes)

        train_ids = {raw for f in train_frames for raw, _ in f[-1]}
        test_ids = {raw for f in test_frames for raw, _ in f[-1]}
        if self.spec.drop_single_camera_ids:
            multi_train, multi_test = self._multi_camera_ids(train_frames), self._multi_camera_ids(test_frames)
            self.stats["single_camera_ids_dropped"] += len(train_ids - multi_train) + len(test_ids - multi_test)
            train_ids, test_ids = train_ids & multi_train, test_ids & multi_test
        shared = train_ids & test_ids
        if shared:
            logger.warning(f"{len(shared)} identities appear in both splits, dropping them from both")
            self.stats["cross_split_ids_dropped"] += len(shared)
            train_ids -= shared
            test_ids -= shared

        train = self._manifest(train_frames, train_ids, Split.TRAIN)
        test = self._manifest(test_frames, test_ids, Split.TEST)
        queries = self._queries(test)
        self.stats["train_frames"] = len(train.frames)
        self.stats["test_frames"] = len(test.frames)
        self.stats["queries"] = len(queries)
        return BuildOutputs(train, test, queries, image_root=source.root, stats=dict(self.stats))

    def print_stats(self, elapsed_time: float = 0):
        """Print builder statistics."""
        print("\n" + "=" * 80)
        print("DATASET BUILD STATISTICS")
        print("=" * 80)
        print(f"Source frames seen: {self.stats['source_frames']}")
        print(f"Frames kept by sampling: {self.stats['sampled_frames']}")
        print(f"Frames removed by weather filter: {self.stats['weather_filtered_frames']}")
        print(f"Pedestrian boxes dropped: {self.stats['pedestrian_boxes_dropped']}")
        print(f"Single-camera identities dropped: {self.stats['single_camera_ids_dropped']}")
        print(f"Cross-split identities dropped: {self.stats['cross_split_ids_dropped']}")
        print(f"Train frames: {self.stats['train_frames']}  Test frames: {self.stats['test_frames']}")
        print(f"Queries: {self.stats['queries']}")
        if elapsed_time > 0:
            print(f"\nTotal time: {elapsed_time:.2f}s")
        print("=" * 80 + "\n")


def _id_sort_key(raw_id: str) -> Tuple[int, str]:
    return (0, f"{int(raw_id):012d}") if raw_id.isdigit() else (1, raw_id)


def build_dataset(source: TrackingSource, spec: BuildSpec) -> Tuple[DatasetManifest, DatasetManifest, List[QueryRecord]]:
    outputs = DatasetBuilder(spec).build(source)
    return outputs.train, outputs.test, outputs.queries


def write_query_crops(queries: List[QueryRecord], test: DatasetManifest, image_root: Path, out_dir: Path) -> int:
    """Cut the exact ground-truth box of every query from its frame; returns crops written."""
    frames = test.frame_index()
    written = 0
    for query in queries:
        frame = frames[query.source_frame_id]
        path = Path(image_root) / frame.image_path
        if not path.exists():
            logger.warning(f"query {query.query_id}: frame image {path} missing, crop not written")
            continue
        crop = cut_box(read_frame(path), query.box.box)
        dest = Path(out_dir) / query.crop_path
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_png((crop * 255).round().clamp(0, 255).to(torch.uint8), str(dest))
        written += 1
    return written


def write_build(outputs: BuildOutputs, out_dir: Path) -> Dict[str, Path]:
    """Write manifests, query list, query crops and stats.json under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": write_manifest(outputs.train, out_dir / "train.jsonl"),
        "test": write_manifest(outputs.test, out_dir / "test.jsonl"),
        "queries": write_queries(outputs.queries, out_dir / "queries.jsonl", outputs.test.name),
    }
    crops = write_query_crops(outputs.queries, outputs.test, Path(outputs.image_root), out_dir)
    summary = {
        "image_root": str(outputs.image_root),
        "train": dataset_stats(outputs.train),
        "test": dataset_stats(outputs.test, outputs.queries),
        "query_crops_written": crops,
        "build": outputs.stats,
    }
    paths["stats"] = out_dir / "stats.json"
    paths["stats"].write_bytes(orjson.dumps(summary, option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2) + b"\n")
    logger.info(f"Wrote build to {out_dir}: {summary['train']} / {summary['test']}")
    return paths


def main():
    load_dotenv()
    log_dir = os.getenv("LOG_DIR", "logs")
    os.makedirs(log_dir, exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(os.path.join(log_dir, 'build_dataset.log')),
            logging.StreamHandler()
        ]
    )

    parser = argparse.ArgumentParser(description='Vehicle search dataset builder')
    parser.add_argument('--source-kind', choices=['cityflow', 'synthehicle', 'generic', 'toy'], required=True,
                        help='Layout of the tracking source')
    parser.add_argument('--source-root', required=True, help='Root directory of the tracking source')
    parser.add_argument('--spec', required=True, help='YAML build spec')
    parser.add_argument('--out', required=True, help='Output directory')
    args = parser.parse_args()

    start = time.time()
    spec = BuildSpec.load(Path(args.spec))
    source = load_tracking_source(args.source_kind, args.source_root)
    builder = DatasetBuilder(spec)
    outputs = builder.build(source)
    write_build(outputs, Path(args.out))
    builder.print_stats(time.time() - start)


if __name__ == '__main__':
    main()
