import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from datamodel.records import BoxAnnotation, DatasetManifest, FrameRecord, Split  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the toy end-to-end training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end toy runs, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def _isolated_env(tmp_path, monkeypatch):
    monkeypatch.setenv("LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setenv("DATA_DIR", str(tmp_path / "data"))
    monkeypatch.delenv("DEVICE", raising=False)


def make_frame(frame_id, boxes, camera_id="c000", scene_id="s1", width=100, height=100, weather="day"):
    """`boxes` is a list of (box, identity)."""
    return FrameRecord(
        frame_id=frame_id,
        image_path=f"{scene_id}/{camera_id}/{frame_id}.png",
        scene_id=scene_id,
        camera_id=camera_id,
        width=width,
        height=height,
        weather_tag=weather,
        annotations=[BoxAnnotation(box=box, identity=identity, camera_id=camera_id) for box, identity in boxes],
    )


def make_manifest(frames, split=Split.TEST, name="unit", remap=None):
    identities = sorted({a.identity for f in frames for a in f.annotations if a.identity})
    return DatasetManifest(
        name=name,
        split=split,
        frames=frames,
        num_identities=len(identities),
        identity_remap=remap if remap is not None else {str(100 + c): c for c in identities},
    )


@pytest.fixture(scope="session")
def toy_source(tmp_path_factory):
    from providers.toy_scenes import generate_toy_source

    return generate_toy_source(tmp_path_factory.mktemp("toy_source"))


@pytest.fixture(scope="session")
def toy_build(tmp_path_factory, toy_source):
    """Toy source built and written: train/test manifests, queries, crops and stats.json."""
    from etl.build_dataset import BuildSpec, DatasetBuilder, write_build

    spec = BuildSpec(name="toy", sample_stride=5, train_scenes=["scene00"], test_scenes=["scene01"])
    outputs = DatasetBuilder(spec).build(toy_source)
    out_dir = tmp_path_factory.mktemp("toy_build")
    write_build(outputs, out_dir)
    return outputs, out_dir


@pytest.fixture
def toy_backbone():
    from models.config import BackboneConfig

    return BackboneConfig.toy()


class FakeIndices:
    def __init__(self):
        self.created = {}

    def exists(self, index):
        return index in self.created

    def create(self, index, **body):
        self.created[index] = body


class FakeElasticsearch:
    """Records search bodies and answers with canned hits."""

    def __init__(self, hits=None, aggregations=None, total=0, alive=True):
        self.indices = FakeIndices()
        self.hits = hits or []
        self.aggregations = aggregations or {}
        self.total = total
        self.alive = alive
        self.searches = []

    def ping(self):
        return self.alive

    def search(self, index, **body):
        self.searches.append({"index": index, **body})
        return {
            "hits": {"total": {"value": self.total}, "hits": self.hits},
            "aggregations": self.aggregations,
        }
